//! Gain synthesis by variable substitution and the alternating
//! minimization of the H-infinity level.

use super::affine::{Affine, VarId, VarSpace};
use super::assembly::{AssemblyError, assemble, assemble_xi_tilde, Corner, Form, Mode, PhiVars, SynthesisParams};
use super::certificate::{verify_certificate, CertificateReport, ControllerCertificate};
use super::sdp::{sdp_solve, Constraint, Sense, SdpError, SdpProblem, SdpSettings, SdpSolution};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// How the gain-dependent blocks enter the problem.
#[derive(Debug, Clone, PartialEq)]
pub enum GainMode {
    /// N, Xi_1, Xi_2 independent.
    Free,
    /// N = r P11 and Xi_1 = r Xi_2 with r an m x m matrix.
    Ratio(DMatrix<f64>),
    /// Xi_2 = P11 B2 K and Xi_1 = N B2 K with K given.
    FixedK(DMatrix<f64>),
}

#[derive(Debug, thiserror::Error)]
pub enum SynthesisError {
    #[error(transparent)]
    Params(#[from] super::assembly::AssemblyError),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("LMIs infeasible at {stage}: {source}; adjust h, epsilon, Lambda or beta_1")]
    Infeasible {
        stage: String,
        #[source]
        source: SdpError,
    },
    #[error("recovered certificate rejected: {}", .report.summary())]
    Rejected { certificate: Box<ControllerCertificate>, report: Box<CertificateReport> },
    #[error("Schur relaxation inconsistent at corner {corner}: LMI max eigenvalue {lmi:.3e}, BMI max eigenvalue {bmi:.3e}")]
    SchurInconsistent { corner: usize, lmi: f64, bmi: f64 },
}

/// Decision variables of one SDP instance.
pub struct Design {
    pub vs: VarSpace,
    pub vars: PhiVars,
    ids: Vec<(String, VarId)>,
}

impl Design {
    pub fn new(params: &SynthesisParams, gain: &GainMode, hinf: bool) -> Design {
        let m = params.m();
        let ny = params.n_y();
        let nh = params.n_h();
        let mut vs = VarSpace::new();
        let mut ids = vec![];
        let mut reg = |vs: &mut VarSpace, name: &str, id: VarId| {
            ids.push((name.to_string(), id));
            vs.expr(id)
        };
        let id = vs.sym("P", 2 * m);
        let p = reg(&mut vs, "P", id);
        let id = vs.sym("U", m);
        let u = reg(&mut vs, "U", id);
        let id = vs.full("Q1", m, m);
        let q1 = reg(&mut vs, "Q1", id);
        let id = vs.full("Q2", m, m);
        let q2 = reg(&mut vs, "Q2", id);
        let id = vs.diag("Omega", nh);
        let omega = reg(&mut vs, "Omega", id);
        let id = vs.diag("L", nh);
        let l = reg(&mut vs, "L", id);
        let id = vs.full("M1", m, m);
        let m1 = reg(&mut vs, "M1", id);
        let id = vs.full("M2", m, m);
        let m2 = reg(&mut vs, "M2", id);
        let id = vs.full("M3", m, m);
        let m3 = reg(&mut vs, "M3", id);
        let p11 = p.view(0, 0, m, m);
        let (n, xi1, xi2) = match gain {
            GainMode::Free => {
                let id = vs.full("N", m, m);
                let n = reg(&mut vs, "N", id);
                let id = vs.full("Xi1", m, ny);
                let xi1 = reg(&mut vs, "Xi1", id);
                let id = vs.full("Xi2", m, ny);
                let xi2 = reg(&mut vs, "Xi2", id);
                (n, xi1, xi2)
            }
            GainMode::Ratio(r) => {
                let id = vs.full("Xi2", m, ny);
                let xi2 = reg(&mut vs, "Xi2", id);
                (p11.lmul(r), xi2.lmul(r), xi2)
            }
            GainMode::FixedK(k) => {
                let id = vs.full("N", m, m);
                let n = reg(&mut vs, "N", id);
                let bk = &params.b2 * k;
                (n.clone(), n.mul(&bk), p11.mul(&bk))
            }
        };
        let beta1 = match params.beta1 {
            Some(b) => Affine::constant(DMatrix::from_element(1, 1, b)),
            None => {
                let id = vs.scalar("beta1");
                reg(&mut vs, "beta1", id)
            }
        };
        let rho = if hinf {
            let id = vs.scalar("rho");
            Some(reg(&mut vs, "rho", id))
        } else {
            None
        };
        let vars = PhiVars { p, u, q1, q2, omega, l, m1, m2, m3, n, xi1, xi2, beta1, rho };
        Design { vs, vars, ids }
    }

    pub fn id(&self, name: &str) -> Option<VarId> {
        self.ids.iter().find(|(n, _)| n == name).map(|(_, id)| *id)
    }

    /// Every constraint of the relaxed problem.
    pub fn constraints(&self, params: &SynthesisParams, mode: Mode) -> Vec<Constraint> {
        let v = &self.vars;
        let pos = |name: &str, a: &Affine| Constraint {
            name: name.to_string(),
            lmi: super::affine::BlockSym::single(a.clone()).to_sparse(),
            sense: Sense::PosDef,
        };
        let mut out = vec![
            pos("P", &v.p),
            pos("U", &v.u),
            pos("Omega", &v.omega),
            pos("L", &v.l),
            Constraint { name: "Xi~".into(), lmi: assemble_xi_tilde(v, params.h).to_sparse(), sense: Sense::PosDef },
        ];
        if params.beta1.is_none() {
            out.push(pos("beta1", &v.beta1));
        }
        if let Some(rho) = &v.rho {
            out.push(pos("rho", rho));
        }
        for c in corners_for(mode) {
            out.push(Constraint {
                name: corner_name(c, mode),
                lmi: assemble(params, v, c, mode, Form::LmiScaled).to_sparse(),
                sense: Sense::NegDef,
            });
        }
        out
    }

    pub fn value(&self, name: &str, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.id(name).map(|id| self.vs.value_of(id, x))
    }

    /// Every certificate block at the decision vector x.
    pub fn certificate(&self, params: &SynthesisParams, x: &DVector<f64>, k: DMatrix<f64>, r: Option<DMatrix<f64>>) -> ControllerCertificate {
        let v = &self.vars;
        ControllerCertificate {
            p: v.p.eval(x),
            u: v.u.eval(x),
            q1: v.q1.eval(x),
            q2: v.q2.eval(x),
            omega: v.omega.eval(x),
            l: v.l.eval(x),
            m1: v.m1.eval(x),
            m2: v.m2.eval(x),
            m3: v.m3.eval(x),
            n: v.n.eval(x),
            beta1: v.beta1.eval(x)[(0, 0)],
            rho: v.rho.as_ref().map(|r| r.eval(x)[(0, 0)]),
            r,
            xi2: &v.p11().eval(x) * &params.b2 * &k,
            k,
            params: params.clone(),
            slack: None,
            provenance: Default::default(),
        }
    }
}

/// The corners that carry a constraint. The H-infinity matrices are
/// written for both tau limits in both modes as well.
pub fn corners_for(_mode: Mode) -> [Corner; 4] {
    Corner::ALL
}

pub fn corner_name(c: Corner, mode: Mode) -> String {
    match mode {
        Mode::Hinf => format!("Phi{}", c.index() + 4),
        Mode::NoDisturbance => format!("PhiHat{}", c.index()),
        Mode::Stability => format!("Phi{}", c.index()),
    }
}

/// Options of the synthesis driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisOptions {
    /// Certificate strictness.
    pub margin: f64,
    /// Solver margin (slightly above `margin` so verification passes).
    pub solver_margin: f64,
    /// Multipliers tried on (beta_1, Lambda) when the nominal pair fails.
    pub adjust_grid: Vec<f64>,
    pub mode: Mode,
    /// Relative accuracy of objective minimizations (rho).
    pub objective_tol: f64,
    /// Multipliers on Lambda scanned by the attenuation search; the
    /// smallest attenuation level wins.
    pub gamma_lambda_grid: Vec<f64>,
    /// Leaves beta_1 to the solver in the attenuation search. A fixed
    /// beta_1 pins the scale of P and inflates rho.
    pub gamma_free_beta1: bool,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            margin: 1e-6,
            solver_margin: 1.5e-6,
            adjust_grid: vec![1.0, 0.5, 2.0, 0.25, 4.0, 0.1, 10.0],
            mode: Mode::Stability,
            objective_tol: 1e-6,
            gamma_lambda_grid: vec![1.0, 0.1, 0.01],
            gamma_free_beta1: true,
        }
    }
}

fn settings(opts: &SynthesisOptions) -> SdpSettings {
    SdpSettings { margin: opts.solver_margin, objective_tol: opts.objective_tol, ..SdpSettings::default() }
}

/// Solves one relaxed problem.
pub fn solve_design(
    params: &SynthesisParams,
    gain: &GainMode,
    mode: Mode,
    minimize_rho: bool,
    opts: &SynthesisOptions,
) -> Result<(Design, SdpSolution), SdpError> {
    let hinf = mode == Mode::Hinf;
    let d = Design::new(params, gain, hinf);
    let mut objective = None;
    if minimize_rho {
        let id = d.id("rho").expect("rho is a variable in H-infinity mode");
        let mut c = DVector::zeros(d.vs.n);
        c[d.vs.block(id).offset] = 1.0;
        objective = Some(c);
    }
    let problem = SdpProblem { n: d.vs.n, constraints: d.constraints(params, mode), objective };
    let sol = sdp_solve(&problem, &settings(opts), None)?;
    Ok((d, sol))
}

/// r = N P11^-1.
pub fn ratio_from(n: &DMatrix<f64>, p11: &DMatrix<f64>) -> DMatrix<f64> {
    n * p11.clone().try_inverse().expect("P11 is positive definite on a feasible point")
}

/// Ratios tried in order: the exact matrix N P11^-1, then the
/// least-squares scalar multiple of the identity.
pub fn ratio_candidates(n: &DMatrix<f64>, p11: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let m = p11.nrows();
    let scalar = n.dot(p11) / p11.norm_squared();
    vec![ratio_from(n, p11), DMatrix::identity(m, m) * scalar]
}

fn solve_ratio(
    params: &SynthesisParams,
    n: &DMatrix<f64>,
    p11: &DMatrix<f64>,
    mode: Mode,
    minimize_rho: bool,
    opts: &SynthesisOptions,
) -> Result<(DMatrix<f64>, (Design, SdpSolution)), SdpError> {
    let mut last = None;
    for r in ratio_candidates(n, p11) {
        match solve_design(params, &GainMode::Ratio(r.clone()), mode, minimize_rho, opts) {
            Ok(ds) => return Ok((r, ds)),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one ratio tried"))
}

/// K = B2^-1 P11^-1 Xi_2.
pub fn recover_gain(b2: &DMatrix<f64>, p11: &DMatrix<f64>, xi2: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let b2i = b2.clone().try_inverse()?;
    let p11i = p11.clone().try_inverse()?;
    Some(b2i * p11i * xi2)
}

fn check_b2(b2: &DMatrix<f64>) -> Result<(), SynthesisError> {
    if !b2.is_square() {
        return Err(SynthesisError::Unsupported(format!("B_2 is {}x{}; the gain formula needs a square input matrix", b2.nrows(), b2.ncols())));
    }
    let sv = b2.singular_values();
    let cond = sv.max() / sv.min();
    if !(cond < 1e10) {
        return Err(SynthesisError::Unsupported(format!("B_2 condition number {cond:.3e}")));
    }
    Ok(())
}

/// Largest eigenvalue of the LMI corner and the BMI corner at x, per corner.
/// Negative LMI with non-negative BMI is a relaxation error.
pub fn schur_consistency(params: &SynthesisParams, design: &Design, x: &DVector<f64>, mode: Mode) -> Result<(), SynthesisError> {
    let concrete = design.vars_at(x);
    for c in corners_for(mode) {
        let lmi = assemble(params, &design.vars, c, mode, Form::LmiScaled).to_sparse().eval(x).symmetric_eigenvalues().max();
        let bmi = assemble(params, &concrete, c, mode, Form::Bmi).eval(&DVector::zeros(0)).symmetric_eigenvalues().max();
        if lmi < 0.0 && !(bmi < 0.0) {
            return Err(SynthesisError::SchurInconsistent { corner: c.index(), lmi, bmi });
        }
    }
    Ok(())
}

impl Design {
    /// The variable expressions frozen at x.
    pub fn vars_at(&self, x: &DVector<f64>) -> PhiVars {
        let v = &self.vars;
        let c = |a: &Affine| Affine::constant(a.eval(x));
        PhiVars {
            p: c(&v.p),
            u: c(&v.u),
            q1: c(&v.q1),
            q2: c(&v.q2),
            omega: c(&v.omega),
            l: c(&v.l),
            m1: c(&v.m1),
            m2: c(&v.m2),
            m3: c(&v.m3),
            n: c(&v.n),
            xi1: c(&v.xi1),
            xi2: c(&v.xi2),
            beta1: c(&v.beta1),
            rho: v.rho.as_ref().map(c),
        }
    }
}

/// Variable substitution and gain recovery, with the (beta_1, Lambda)
/// adjustment grid when the nominal pair is infeasible.
pub fn synthesize_gain(params: &SynthesisParams) -> Result<ControllerCertificate, SynthesisError> {
    synthesize_gain_with(params, &SynthesisOptions::default())
}

pub fn synthesize_gain_with(params: &SynthesisParams, opts: &SynthesisOptions) -> Result<ControllerCertificate, SynthesisError> {
    params.validate()?;
    check_b2(&params.b2)?;
    let mut first_err = None;
    for (i, s) in adjusted(params, &opts.adjust_grid).into_iter().enumerate() {
        match synthesize_once(&s, opts) {
            Ok(mut cert) => {
                if i > 0 {
                    log::info!("nominal (beta_1, Lambda) infeasible; used beta_1 = {:?}, Lambda = {}", s.beta1, s.lambda);
                }
                cert.provenance.adjustments = i;
                return Ok(cert);
            }
            Err(e @ SynthesisError::SchurInconsistent { .. }) => return Err(e),
            Err(e) => {
                log::info!("synthesis attempt {i} failed: {e}");
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    Err(first_err.expect("adjustment grid is never empty"))
}

/// The nominal parameters followed by the grid of scaled (beta_1, Lambda).
fn adjusted(params: &SynthesisParams, grid: &[f64]) -> Vec<SynthesisParams> {
    let mut out = vec![params.clone()];
    for &sb in grid {
        for &sl in grid {
            if sb == 1.0 && sl == 1.0 {
                continue;
            }
            let mut p = params.clone();
            p.beta1 = p.beta1.map(|b| b * sb);
            if p.beta1.is_none() && sb != 1.0 {
                continue;
            }
            p.lambda *= sl;
            out.push(p);
        }
    }
    out
}

fn synthesize_once(params: &SynthesisParams, opts: &SynthesisOptions) -> Result<ControllerCertificate, SynthesisError> {
    let mode = opts.mode;
    let infeasible = |stage: &str| {
        let stage = stage.to_string();
        move |source| SynthesisError::Infeasible { stage, source }
    };
    // step 1: N free
    let (d, sol) = solve_design(params, &GainMode::Free, mode, false, opts).map_err(infeasible("step 1 (N free)"))?;
    let p11 = d.vars.p11().eval(&sol.x);
    // step 2: N = r P11
    let (r, (d, sol)) = solve_ratio(params, &d.value("N", &sol.x).unwrap(), &p11, mode, false, opts).map_err(infeasible("step 2 (N = r P11)"))?;
    schur_consistency(params, &d, &sol.x, mode)?;
    let p11 = d.vars.p11().eval(&sol.x);
    let xi2 = d.value("Xi2", &sol.x).unwrap();
    let k = recover_gain(&params.b2, &p11, &xi2).ok_or_else(|| SynthesisError::Unsupported("singular P11 or B_2".into()))?;
    let mut cert = d.certificate(params, &sol.x, k, Some(r));
    cert.provenance.newton_steps = sol.newton_steps;
    finish(cert, mode, opts)
}

fn finish(mut cert: ControllerCertificate, mode: Mode, opts: &SynthesisOptions) -> Result<ControllerCertificate, SynthesisError> {
    let report = verify_certificate(&cert, mode, opts.margin);
    cert.slack = Some(report.clone());
    if report.passed() {
        Ok(cert)
    } else {
        Err(SynthesisError::Rejected { certificate: Box::new(cert), report: Box::new(report) })
    }
}

/// Searches a certificate for a given gain.
pub fn certify_gain(params: &SynthesisParams, k: &DMatrix<f64>, mode: Mode, opts: &SynthesisOptions) -> Result<ControllerCertificate, SynthesisError> {
    params.validate()?;
    if k.nrows() != params.n_u() || k.ncols() != params.n_y() {
        return Err(SynthesisError::Unsupported(format!("K must be {}x{}", params.n_u(), params.n_y())));
    }
    let (d, sol) = solve_design(params, &GainMode::FixedK(k.clone()), mode, mode == Mode::Hinf, opts)
        .map_err(|source| SynthesisError::Infeasible { stage: "fixed gain".into(), source })?;
    let mut cert = d.certificate(params, &sol.x, k.clone(), None);
    cert.provenance.newton_steps = sol.newton_steps;
    finish(cert, mode, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaResult {
    pub certificate: ControllerCertificate,
    pub gamma_opt: f64,
    /// Accepted rho values, non-increasing.
    pub rho_history: Vec<f64>,
    pub stalled: bool,
}

/// Step 2 (K fixed, N free) then step 3 (N = r P11, K reopened); the
/// better verified certificate, if any.
fn gamma_iteration(params: &SynthesisParams, best: &ControllerCertificate, opts: &SynthesisOptions) -> Result<Option<ControllerCertificate>, SynthesisError> {
    let Ok((d, sol)) = solve_design(params, &GainMode::FixedK(best.k.clone()), Mode::Hinf, true, opts) else {
        return Ok(None);
    };
    let n = d.value("N", &sol.x).unwrap();
    let p11 = d.vars.p11().eval(&sol.x);
    let mut cands = vec![d.certificate(params, &sol.x, best.k.clone(), None)];
    if let Ok((r, (d, sol))) = solve_ratio(params, &n, &p11, Mode::Hinf, true, opts) {
        schur_consistency(params, &d, &sol.x, Mode::Hinf)?;
        let p11 = d.vars.p11().eval(&sol.x);
        if let Some(k) = recover_gain(&params.b2, &p11, &d.value("Xi2", &sol.x).unwrap()) {
            cands.push(d.certificate(params, &sol.x, k, Some(r)));
        }
    }
    cands.sort_by(|a, b| a.rho.unwrap().total_cmp(&b.rho.unwrap()));
    Ok(cands.into_iter().find_map(|c| finish(c, Mode::Hinf, opts).ok()))
}

/// Alternates a fixed-gain minimization of rho with a fixed-ratio
/// minimization that reopens the gain.
pub fn optimize_gamma(params: &SynthesisParams, omega_rho: f64) -> Result<GammaResult, SynthesisError> {
    optimize_gamma_with(params, omega_rho, &SynthesisOptions { mode: Mode::Hinf, ..SynthesisOptions::default() })
}

pub fn optimize_gamma_with(params: &SynthesisParams, omega_rho: f64, opts: &SynthesisOptions) -> Result<GammaResult, SynthesisError> {
    params.validate()?;
    check_b2(&params.b2)?;
    if !(omega_rho >= 0.0) {
        return Err(SynthesisError::Params(AssemblyError::Invalid("omega_rho must be non-negative".into())));
    }
    let opts = SynthesisOptions { mode: Mode::Hinf, ..opts.clone() };
    let grid = if opts.gamma_lambda_grid.is_empty() { vec![1.0] } else { opts.gamma_lambda_grid.clone() };
    let mut best: Option<GammaResult> = None;
    let mut first_err = None;
    for (i, &scale) in grid.iter().enumerate() {
        let mut p = params.clone();
        p.lambda *= scale;
        if opts.gamma_free_beta1 {
            p.beta1 = None;
        }
        match optimize_gamma_at(&p, omega_rho, &opts) {
            Ok(mut g) => {
                log::info!("attenuation search: Lambda x {scale} gives gamma {:.4}", g.gamma_opt);
                g.certificate.provenance.adjustments = i;
                if best.as_ref().map_or(true, |b| g.gamma_opt < b.gamma_opt) {
                    best = Some(g);
                }
            }
            Err(e) => {
                log::info!("attenuation search: Lambda x {scale} failed: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.expect("grid is nonempty"))
}

/// The alternation for one parameter set.
fn optimize_gamma_at(params: &SynthesisParams, omega_rho: f64, opts: &SynthesisOptions) -> Result<GammaResult, SynthesisError> {
    const STALL: usize = 20;
    // starting point: the substitution with rho minimized at fixed ratio
    let (d, sol) = solve_design(params, &GainMode::Free, Mode::Hinf, false, opts)
        .map_err(|source| SynthesisError::Infeasible { stage: "step 1 (N free)".into(), source })?;
    let (r, (d, sol)) = solve_ratio(params, &d.value("N", &sol.x).unwrap(), &d.vars.p11().eval(&sol.x), Mode::Hinf, true, opts)
        .map_err(|source| SynthesisError::Infeasible { stage: "step 1 (N = r P11)".into(), source })?;
    schur_consistency(params, &d, &sol.x, Mode::Hinf)?;
    let p11 = d.vars.p11().eval(&sol.x);
    let k = recover_gain(&params.b2, &p11, &d.value("Xi2", &sol.x).unwrap())
        .ok_or_else(|| SynthesisError::Unsupported("singular P11".into()))?;
    let mut best = finish(d.certificate(params, &sol.x, k, Some(r)), Mode::Hinf, opts)?;
    let mut history = vec![best.rho.unwrap()];
    let mut stalled = true;
    for _ in 0..STALL {
        let prev = *history.last().unwrap();
        match gamma_iteration(params, &best, opts)? {
            // accepted only when rho decreases by at least the tolerance
            Some(c) if prev - c.rho.unwrap() >= omega_rho => {
                history.push(c.rho.unwrap());
                best = c;
            }
            _ => {
                stalled = false;
                break;
            }
        }
    }
    let gamma_opt = best.rho.unwrap().sqrt();
    Ok(GammaResult { certificate: best, gamma_opt, rho_history: history, stalled })
}
