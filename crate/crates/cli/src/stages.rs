//! Pipeline stages. Every stage reads its inputs from the configuration and
//! from artifact files, and writes its results into the output directory.

use crate::config::{ExperimentConfig, NetworkSource, SamplerKind, SlowModelKind};
use crate::Exit;
use anyhow::{anyhow, Context, Result};
use etcpde::etc_sim::{
    count_triggers, hinf_energy_ratio, simulate_static, simulate_switching,
    simulate_switching_full_pde, ClosedLoopTrace, EtcError, RunSettings, SlowModel, TriggerConfig,
    TriggerSummary,
};
use etcpde::galerkin::{modal_nonlinearity, ModalBasis, SlowSystem};
use etcpde::lmi::assembly::Mode;
use etcpde::lmi::certificate::{
    ultimate_bound, verify_certificate, CertificateReport, ControllerCertificate,
};
use etcpde::lmi::synthesis::{optimize_gamma_with, synthesize_gain_with};
use etcpde::mnn::{
    estimate_delta, generate_targets_at, mse, published_network, train_lm, Mnn, ModalSampler,
    PdeSampler, SlowSampler,
};
use etcpde::pde_sim::{simulate, Disturbance, DisturbanceModel, PlantModel};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const CERTIFICATE: &str = "certificate.json";
pub const HINF_CERTIFICATE: &str = "certificate_hinf.json";
const NET_W: &str = "network_w.csv";
const NET_V: &str = "network_v.csv";
const NET_QR: &str = "network_qr.csv";
const IDENT: &str = "identification.json";

pub fn write(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let p = dir.join(name);
    std::fs::write(&p, contents).with_context(|| format!("cannot write {}", p.display()))?;
    Ok(p)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, v: &T) -> Result<PathBuf> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    write(dir, name, s.as_bytes())
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("missing artifact {}", path.display()))
}

/// Exact slow part of the plant's reaction term.
pub fn truth<'a>(
    plant: &'a PlantModel,
    basis: &'a ModalBasis,
) -> impl Fn(&DVector<f64>) -> DVector<f64> + 'a {
    move |x| modal_nonlinearity(basis, &|v| plant.reaction.eval(v), x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisReport {
    pub eigenvalues: Vec<f64>,
    pub separable: bool,
    pub slow_system: SlowSystem,
    pub warnings: Vec<String>,
}

pub fn basis(cfg: &ExperimentConfig, out: &Path) -> Result<BasisReport> {
    let b = cfg.basis()?;
    let sys = cfg.slow_system(&b)?;
    write(out, "eigenvalues.csv", b.eigenvalues_csv().as_bytes())?;
    write(out, "basis.csv", b.to_csv(201).as_bytes())?;
    let rep = BasisReport {
        eigenvalues: b.eigenvalues.clone(),
        separable: b.separable,
        slow_system: sys,
        warnings: b.warnings.clone(),
    };
    write_json(out, "slow_system.json", &rep)?;
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub source: NetworkSource,
    pub delta: f64,
    /// Bound measured against the exact slow nonlinearity on the region.
    pub measured_delta: f64,
    pub samples: usize,
    pub mse: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub warnings: Vec<String>,
}

pub fn identify(cfg: &ExperimentConfig, out: &Path) -> Result<(Mnn, IdentificationReport)> {
    let id = &cfg.identification;
    let plant = cfg.plant_model()?;
    let b = cfg.basis()?;
    let sys = cfg.slow_system(&b)?;
    let f = truth(&plant, &b);
    let (net, samples, fit, warnings) = match id.source {
        NetworkSource::Published => (
            published_network(id.published.expect("validated")),
            0,
            None,
            vec![],
        ),
        NetworkSource::Trained => {
            let starts = id.region.grid_with_rays(id.spacing, id.rays);
            let data = match id.sampler {
                SamplerKind::Pde => {
                    let s = PdeSampler {
                        plant: &plant,
                        basis: &b,
                        grid_n: id.grid_n,
                        substeps: id.substeps,
                        sensors: id.sensors,
                    };
                    generate_targets_at(&s as &dyn SlowSampler, &starts, id.dt_s, &sys.a_s)?
                }
                SamplerKind::Modal => {
                    let s = ModalSampler {
                        a_s: sys.a_s.clone(),
                        f_s: &f,
                        substeps: id.substeps,
                    };
                    generate_targets_at(&s as &dyn SlowSampler, &starts, id.dt_s, &sys.a_s)?
                }
            };
            let init = Mnn::random(b.m, id.n_h, id.q, id.r, id.seed);
            let res = train_lm(&init, &data, &cfg.lm(), Some(id.seed))?;
            let m = mse(&res.net, &data);
            log::info!("LM training: {} iterations, mse {m:.3e}", res.history.len());
            (
                res.net,
                data.inputs.len(),
                Some((m, res.history.len(), res.converged)),
                data.warnings,
            )
        }
    };
    let measured = estimate_delta(&net, &f, &id.region, id.spacing)?;
    let delta = id.delta.unwrap_or(measured);
    let (w, v, qr) = net.to_csv();
    write(out, NET_W, w.as_bytes())?;
    write(out, NET_V, v.as_bytes())?;
    write(out, NET_QR, qr.as_bytes())?;
    let rep = IdentificationReport {
        source: id.source,
        delta,
        measured_delta: measured,
        samples,
        mse: fit.map(|f| f.0),
        iterations: fit.map(|f| f.1),
        converged: fit.map(|f| f.2),
        warnings,
    };
    write_json(out, IDENT, &rep)?;
    Ok((net, rep))
}

/// Network and delta written by `identify`.
pub fn load_network(dir: &Path) -> Result<(Mnn, f64)> {
    let net = Mnn::from_csv(
        &read(&dir.join(NET_W))?,
        &read(&dir.join(NET_V))?,
        &read(&dir.join(NET_QR))?,
    )?;
    let rep: IdentificationReport = serde_json::from_str(&read(&dir.join(IDENT))?)
        .context("malformed identification report")?;
    Ok((net, rep.delta))
}

pub fn load_certificate(path: &Path) -> Result<ControllerCertificate> {
    ControllerCertificate::from_json(&read(path)?)
        .map_err(|e| anyhow!("malformed certificate {}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub k: Vec<Vec<f64>>,
    pub beta1: f64,
    pub lambda: f64,
    pub adjustments: usize,
    pub checks: String,
    pub ultimate_bound: Option<f64>,
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn synthesize(
    cfg: &ExperimentConfig,
    out: &Path,
    network_dir: &Path,
) -> Result<ControllerCertificate> {
    let (net, delta) = load_network(network_dir)?;
    let b = cfg.basis()?;
    let sys = cfg.slow_system(&b)?;
    let params = cfg.synthesis_params(&sys, &net, delta);
    let cert =
        synthesize_gain_with(&params, &cfg.synthesis_options()).context("stage synthesize")?;
    write(out, CERTIFICATE, cert.to_json().as_bytes())?;
    let rep = SynthesisReport {
        k: rows(&cert.k),
        beta1: cert.beta1,
        lambda: cert.params.lambda[(0, 0)],
        adjustments: cert.provenance.adjustments,
        checks: cert.slack.as_ref().map(|r| r.summary()).unwrap_or_default(),
        ultimate_bound: ultimate_bound(&cert, cfg.simulation.d1).ok(),
    };
    write_json(out, "synthesis.json", &rep)?;
    Ok(cert)
}

pub fn disturbance(cfg: &ExperimentConfig, n_d: usize) -> Disturbance {
    Disturbance::new(cfg.simulation.disturbance.clone(), cfg.simulation.d1, n_d)
}

fn slow_model<'a>(
    kind: SlowModelKind,
    sys: &'a SlowSystem,
    net: &'a Mnn,
    f: &'a dyn Fn(&DVector<f64>) -> DVector<f64>,
) -> SlowModel<'a> {
    match kind {
        SlowModelKind::Truth => SlowModel::with_truth(sys, f),
        SlowModelKind::Network => SlowModel::network(sys, net),
    }
}

fn cert_network(cert: &ControllerCertificate) -> Result<Mnn> {
    let p = &cert.params;
    // sector bounds are q / 2r; unit shapes are stored in the certificate
    let q: Vec<f64> = p.g_max.iter().map(|g| 2.0 * g).collect();
    Ok(Mnn::new(p.w.clone(), p.v.clone(), q, vec![1.0; p.n_h()])?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub slow_triggers: TriggerSummary,
    pub slow_initial_norm: f64,
    pub slow_final_norm: f64,
    pub slow_max_norm: f64,
    /// sup ||xi|| over the second half of the horizon.
    pub slow_sup_norm_late: f64,
    pub ultimate_bound: Option<f64>,
    pub branch_mismatch: f64,
    pub pde_triggers: TriggerSummary,
    pub pde_closed_initial_norm: f64,
    pub pde_closed_final_norm: f64,
    pub pde_closed_max_norm: f64,
    pub pde_open_final_norm: Option<f64>,
    pub notes: Vec<String>,
}

fn late_sup(tr: &ClosedLoopTrace, from: f64) -> f64 {
    tr.times
        .iter()
        .zip(tr.state_norms())
        .filter(|(t, _)| **t >= from)
        .map(|(_, n)| n)
        .fold(0.0, f64::max)
}

pub fn simulate_stage(
    cfg: &ExperimentConfig,
    out: &Path,
    cert_path: &Path,
) -> Result<SimulationReport> {
    let cert = load_certificate(cert_path)?;
    let plant = cfg.plant_model()?;
    let b = cfg.basis()?;
    let sys = cfg.slow_system(&b)?;
    let net = cert_network(&cert)?;
    let f = truth(&plant, &b);
    let model = slow_model(cfg.simulation.model, &sys, &net, &f);
    let trig = TriggerConfig::from_params(&cert.params);
    let dist = disturbance(cfg, sys.n_d());
    let run = RunSettings {
        dt: cfg.simulation.dt,
        t_end: cfg.simulation.t_end,
        x0: cfg.x0(),
    };
    let tr = simulate_switching(&model, &cert.k, &trig, &dist, &run)
        .context("slow-model closed loop")?;
    write(out, "slow_switching.csv", tr.to_csv().as_bytes())?;
    let slow_triggers = count_triggers(&tr)?;
    if tr.branch_mismatch > 1e-12 {
        return Err(Exit::assertion(format!(
            "controller branches differ by {:.3e}",
            tr.branch_mismatch
        ))
        .into());
    }
    let norms = tr.state_norms();

    let (field, ptr) =
        simulate_switching_full_pde(&plant, &cert.k, &trig, &dist, &cfg.simulation.pde)
            .context("full-plant closed loop")?;
    write(out, "pde_trace.csv", field.to_csv().as_bytes())?;
    write(out, "pde_switching.csv", ptr.to_csv().as_bytes())?;
    let mut bin = Vec::new();
    field.write_binary(&mut bin)?;
    write(out, "pde_field.bin", &bin)?;
    let pde_triggers = count_triggers(&ptr)?;
    let mut notes = vec![format!(
        "disturbance: {:?}, D1 = {}",
        cfg.simulation.disturbance, cfg.simulation.d1
    )];
    let open = match simulate(&plant, None, &dist, &cfg.simulation.pde) {
        Ok(o) => {
            write(out, "pde_open_loop.csv", o.to_csv().as_bytes())?;
            o.l2norms.last().copied()
        }
        Err(e) => {
            notes.push(format!("open loop: {e}"));
            None
        }
    };
    let rep = SimulationReport {
        slow_triggers,
        slow_initial_norm: norms[0],
        slow_final_norm: *norms.last().unwrap(),
        slow_max_norm: norms.iter().copied().fold(0.0, f64::max),
        slow_sup_norm_late: late_sup(&tr, 0.5 * cfg.simulation.t_end),
        ultimate_bound: ultimate_bound(&cert, cfg.simulation.d1).ok(),
        branch_mismatch: tr.branch_mismatch,
        pde_triggers,
        pde_closed_initial_norm: field.l2norms[0],
        pde_closed_final_norm: *field.l2norms.last().unwrap(),
        pde_closed_max_norm: field.l2norms.iter().copied().fold(0.0, f64::max),
        pde_open_final_norm: open,
        notes,
    };
    write_json(out, "simulation.json", &rep)?;
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub h: f64,
    pub law: String,
    pub count: usize,
    pub min_inter_event: Option<f64>,
    pub mean_inter_event: Option<f64>,
    pub max_inter_event: Option<f64>,
    pub note: String,
}

fn row(h: f64, law: &str, s: &TriggerSummary, note: String) -> CompareRow {
    CompareRow {
        h,
        law: law.into(),
        count: s.count,
        min_inter_event: s.min_inter_event,
        mean_inter_event: s.mean_inter_event,
        max_inter_event: s.max_inter_event,
        note,
    }
}

pub fn compare_triggers(
    cfg: &ExperimentConfig,
    out: &Path,
    cert_path: &Path,
) -> Result<Vec<CompareRow>> {
    let cert = load_certificate(cert_path)?;
    let plant = cfg.plant_model()?;
    let b = cfg.basis()?;
    let sys = cfg.slow_system(&b)?;
    let net = cert_network(&cert)?;
    let f = truth(&plant, &b);
    let model = slow_model(cfg.simulation.model, &sys, &net, &f);
    let dist = disturbance(cfg, sys.n_d());
    let mut rows_out = Vec::new();
    for h in cfg.compare_h() {
        let trig = TriggerConfig {
            h,
            ..TriggerConfig::from_params(&cert.params)
        };
        let run = RunSettings {
            dt: Some(h / 100.0),
            t_end: cfg.simulation.t_end,
            x0: cfg.x0(),
        };
        let sw = simulate_switching(&model, &cert.k, &trig, &dist, &run)?;
        rows_out.push(row(h, "switching", &count_triggers(&sw)?, String::new()));
        match simulate_static(&model, &cert.k, &trig, &dist, &run) {
            Ok(st) => rows_out.push(row(h, "static", &count_triggers(&st)?, String::new())),
            Err(EtcError::Zeno { t, partial, .. }) => {
                rows_out.push(row(
                    h,
                    "static",
                    &count_triggers(&partial)?,
                    format!("Zeno warning at t = {t}"),
                ));
            }
            Err(e) => return Err(e.into()),
        }
    }
    let mut csv =
        String::from("h,law,count,min_inter_event,mean_inter_event,max_inter_event,note\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.9}")).unwrap_or_default();
    for r in &rows_out {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.h,
            r.law,
            r.count,
            opt(r.min_inter_event),
            opt(r.mean_inter_event),
            opt(r.max_inter_event),
            r.note
        );
    }
    write(out, "trigger_comparison.csv", csv.as_bytes())?;
    Ok(rows_out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRatio {
    pub disturbance: DisturbanceModel,
    pub ratio: f64,
    pub within: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaReport {
    pub gamma_opt: f64,
    pub rho_history: Vec<f64>,
    pub stalled: bool,
    pub k: Vec<Vec<f64>>,
    pub lambda: f64,
    pub energy_ratios: Vec<EnergyRatio>,
}

/// Built-in disturbance shapes used for the energy-ratio check.
pub fn builtin_disturbances() -> Vec<DisturbanceModel> {
    vec![
        DisturbanceModel::Constant,
        DisturbanceModel::DecayingExp { rate: 1.0 },
        DisturbanceModel::DecayingSine {
            rate: 1.0,
            freq: 5.0,
        },
        DisturbanceModel::BandLimitedNoise {
            seed: 7,
            cutoff: 10.0,
            components: 8,
        },
    ]
}

/// int y^T y / int d^T d on the identified model from rest.
pub fn energy_ratios(
    cert: &ControllerCertificate,
    sys: &SlowSystem,
    net: &Mnn,
    d1: f64,
    t_end: f64,
) -> Result<Vec<EnergyRatio>> {
    let model = SlowModel::network(sys, net);
    let trig = TriggerConfig::from_params(&cert.params);
    let g2 = cert
        .rho
        .ok_or_else(|| anyhow!("certificate carries no attenuation level"))?;
    let mut out = Vec::new();
    for d in builtin_disturbances() {
        let dist = Disturbance::new(d.clone(), d1, sys.n_d());
        let tr = simulate_switching(
            &model,
            &cert.k,
            &trig,
            &dist,
            &RunSettings {
                dt: None,
                t_end,
                x0: DVector::zeros(sys.m()),
            },
        )?;
        let ratio = hinf_energy_ratio(&tr)?;
        out.push(EnergyRatio {
            disturbance: d,
            ratio,
            within: ratio <= g2,
        });
    }
    Ok(out)
}

pub fn hinf_optimize(
    cfg: &ExperimentConfig,
    out: &Path,
    network_dir: &Path,
) -> Result<GammaReport> {
    let (net, delta) = load_network(network_dir)?;
    let b = cfg.basis()?;
    let sys = cfg.slow_system(&b)?;
    let params = cfg.synthesis_params(&sys, &net, delta);
    let res = optimize_gamma_with(&params, cfg.synthesis.omega_rho, &cfg.synthesis_options())
        .context("stage hinf-optimize")?;
    write(out, HINF_CERTIFICATE, res.certificate.to_json().as_bytes())?;
    let cnet = cert_network(&res.certificate)?;
    let ratios = energy_ratios(
        &res.certificate,
        &sys,
        &cnet,
        cfg.simulation.d1,
        cfg.simulation.t_end,
    )?;
    let rep = GammaReport {
        gamma_opt: res.gamma_opt,
        rho_history: res.rho_history.clone(),
        stalled: res.stalled,
        k: rows(&res.certificate.k),
        lambda: res.certificate.params.lambda[(0, 0)],
        energy_ratios: ratios,
    };
    write_json(out, "gamma.json", &rep)?;
    Ok(rep)
}

pub fn verify(cert_path: &Path, mode: Mode, margin: f64) -> Result<CertificateReport> {
    let cert = load_certificate(cert_path)?;
    Ok(verify_certificate(&cert, mode, margin))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: String,
    pub passed: bool,
    /// Hard checks decide the exit status.
    pub hard: bool,
}

pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<Check>> {
    basis(cfg, out).context("stage basis")?;
    identify(cfg, out).context("stage identify")?;
    let cert = synthesize(cfg, out, out)?;
    let cert_path = out.join(CERTIFICATE);
    let mut checks = vec![];
    let mut push = |name: &str, value: String, passed: bool, hard: bool| {
        checks.push(Check {
            name: name.into(),
            value,
            passed,
            hard,
        })
    };
    let report = verify_certificate(&cert, cfg.synthesis.mode, cfg.synthesis.margin);
    push(
        "certificate verifies",
        report.summary(),
        report.passed(),
        true,
    );
    if cfg.synthesis.optimize_gamma {
        let g = hinf_optimize(cfg, out, out)?;
        let mono = g.rho_history.windows(2).all(|w| w[1] <= w[0]);
        push(
            "rho history non-increasing",
            format!("{:?}", g.rho_history),
            mono,
            true,
        );
        let ok = g.energy_ratios.iter().all(|r| r.within);
        push(
            "energy ratio <= gamma^2",
            format!("gamma {:.4}", g.gamma_opt),
            ok,
            false,
        );
    }
    let sim = simulate_stage(cfg, out, &cert_path).context("stage simulate")?;
    push(
        "slow closed loop bounded",
        format!("max norm {:.4e}", sim.slow_max_norm),
        sim.slow_max_norm.is_finite(),
        true,
    );
    if let Some(ub) = sim.ultimate_bound {
        push(
            "late sup norm below ultimate bound",
            format!("{:.4e} vs {:.4e}", sim.slow_sup_norm_late, ub),
            sim.slow_sup_norm_late <= ub,
            false,
        );
    }
    let min_ok = |s: &TriggerSummary| s.min_inter_event.map_or(true, |m| m >= s.h * (1.0 - 1e-9));
    push(
        "minimum inter-event time >= h",
        {
            let f = |v: Option<f64>| v.map_or("none".to_string(), |v| format!("{v:.4}"));
            format!(
                "slow {}, full plant {}, h = {}",
                f(sim.slow_triggers.min_inter_event),
                f(sim.pde_triggers.min_inter_event),
                sim.slow_triggers.h
            )
        },
        min_ok(&sim.slow_triggers) && min_ok(&sim.pde_triggers),
        true,
    );
    if let Some(open) = sim.pde_open_final_norm {
        push(
            "full plant: closed loop ends below open loop",
            format!("{:.4e} vs {:.4e}", sim.pde_closed_final_norm, open),
            sim.pde_closed_final_norm < open,
            false,
        );
    }
    let rows_out = compare_triggers(cfg, out, &cert_path).context("stage compare-triggers")?;
    for pair in rows_out.chunks(2) {
        if let [sw, st] = pair {
            push(
                &format!("switching < static events at h = {}", sw.h),
                format!("{} vs {}", sw.count, st.count),
                sw.count < st.count,
                true,
            );
        }
    }
    let mut csv = String::from("check,value,passed,hard\n");
    for c in &checks {
        let _ = writeln!(
            csv,
            "{},\"{}\",{},{}",
            c.name,
            c.value.replace('"', "'"),
            c.passed,
            c.hard
        );
    }
    write(out, "acceptance.csv", csv.as_bytes())?;
    Ok(checks)
}

/// Columns of a trace CSV.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Table> {
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| anyhow!("empty trace file"))?
            .split(',')
            .map(str::to_string)
            .collect();
        let mut rows_out = Vec::new();
        for (i, l) in lines.enumerate() {
            if l.trim().is_empty() {
                continue;
            }
            let r: Vec<f64> = l
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .with_context(|| format!("line {}", i + 2))?;
            if r.len() != header.len() {
                return Err(anyhow!(
                    "line {} has {} fields, header has {}",
                    i + 2,
                    r.len(),
                    header.len()
                ));
            }
            rows_out.push(r);
        }
        Ok(Table {
            header,
            rows: rows_out,
        })
    }

    fn cols(&self, prefix: &str) -> Vec<usize> {
        self.header
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with(prefix))
            .map(|(i, _)| i)
            .collect()
    }

    fn select(&self, prefix: &str) -> String {
        let idx = self.cols(prefix);
        let mut s = String::from("t");
        for &i in &idx {
            let _ = write!(s, ",{}", self.header[i]);
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{:.17e}", r[0]);
            for &i in &idx {
                let _ = write!(s, ",{:.17e}", r[i]);
            }
            s.push('\n');
        }
        s
    }
}

/// Per-figure CSVs from a closed-loop trace and, optionally, a field dump.
pub fn export_plots(
    trace: Option<&Path>,
    field: Option<(&Path, &Path, [f64; 2])>,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let mut written = vec![];
    if let Some(p) = trace {
        let t = Table::parse(&read(p)?)?;
        let xi = t.cols("xi_");
        let mut norm = String::from("t,norm\n");
        for r in &t.rows {
            let n = xi.iter().map(|&i| r[i] * r[i]).sum::<f64>().sqrt();
            let _ = writeln!(norm, "{:.17e},{n:.17e}", r[0]);
        }
        if !xi.is_empty() {
            written.push(write(out, "norm_vs_time.csv", norm.as_bytes())?);
        }
        let mut raster = String::from("t\n");
        if let Some(fi) = t.header.iter().position(|h| h == "fired") {
            for r in t.rows.iter().filter(|r| r[fi] != 0.0) {
                let _ = writeln!(raster, "{:.17e}", r[0]);
            }
        }
        written.push(write(out, "trigger_raster.csv", raster.as_bytes())?);
        for (prefix, name) in [("u_", "u.csv"), ("e_", "e.csv"), ("y_", "y.csv")] {
            written.push(write(out, name, t.select(prefix).as_bytes())?);
        }
    }
    if let Some((bin, pde_trace, domain)) = field {
        let bytes =
            std::fs::read(bin).with_context(|| format!("missing artifact {}", bin.display()))?;
        let (cols, fields) = decode_field(&bytes)?;
        let t = Table::parse(&read(pde_trace)?)?;
        if t.rows.len() != fields.len() {
            return Err(anyhow!(
                "field dump has {} rows, trace has {}",
                fields.len(),
                t.rows.len()
            ));
        }
        let row_step = fields.len().div_ceil(100).max(1);
        let col_step = cols.saturating_sub(1).div_ceil(64).max(1);
        let mut s = String::from("t,p,value\n");
        for (k, f) in fields.iter().enumerate().step_by(row_step) {
            for j in (0..cols).step_by(col_step) {
                let p = domain[0] + (domain[1] - domain[0]) * j as f64 / (cols - 1) as f64;
                let _ = writeln!(s, "{:.17e},{p:.17e},{:.17e}", t.rows[k][0], f[j]);
            }
        }
        written.push(write(out, "field_heatmap.csv", s.as_bytes())?);
        let ni = t
            .header
            .iter()
            .position(|h| h == "norm")
            .ok_or_else(|| anyhow!("field trace lacks a norm column"))?;
        let mut n = String::from("t,norm\n");
        for r in &t.rows {
            let _ = writeln!(n, "{:.17e},{:.17e}", r[0], r[ni]);
        }
        written.push(write(out, "field_norm_vs_time.csv", n.as_bytes())?);
    }
    Ok(written)
}

fn decode_field(bytes: &[u8]) -> Result<(usize, Vec<Vec<f64>>)> {
    let (cols, rows_out) = etcpde::pde_sim::FieldTrace::read_binary(bytes)
        .ok_or_else(|| anyhow!("truncated field dump"))?;
    if cols < 2 {
        return Err(anyhow!("field dump has fewer than two nodes"));
    }
    Ok((cols, rows_out))
}
