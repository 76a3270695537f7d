//! Configuration-driven runner for the reduction, identification,
//! synthesis and simulation stages.

pub mod config;
pub mod stages;

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand, ValueEnum};
use config::ExperimentConfig;
use etcpde::etc_sim::EtcError;
use etcpde::galerkin::GalerkinError;
use etcpde::lmi::assembly::Mode;
use etcpde::lmi::synthesis::SynthesisError;
use etcpde::mnn::MnnError;
use etcpde::pde_sim::SimError;
use std::path::{Path, PathBuf};

pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_ASSERTION: i32 = 4;

/// An error with a fixed exit status.
#[derive(Debug)]
pub struct Exit {
    pub code: i32,
    pub message: String,
}

impl Exit {
    pub fn assertion(message: String) -> Self {
        Exit {
            code: EXIT_ASSERTION,
            message,
        }
    }
}

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Exit {}

/// Exit status for an error: 2 infeasible LMIs, 3 numerical failure,
/// 4 failed assertion, 1 anything else (configuration, I/O).
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Exit>() {
            return e.code;
        }
        if let Some(e) = cause.downcast_ref::<SynthesisError>() {
            return match e {
                SynthesisError::Infeasible { .. } => EXIT_INFEASIBLE,
                SynthesisError::Params(_) | SynthesisError::Unsupported(_) => 1,
                _ => EXIT_NUMERICAL,
            };
        }
        if let Some(e) = cause.downcast_ref::<EtcError>() {
            return match e {
                EtcError::WaitingViolated { .. } => EXIT_ASSERTION,
                EtcError::Invalid(_) | EtcError::UndefinedRatio => 1,
                _ => EXIT_NUMERICAL,
            };
        }
        if cause.downcast_ref::<SimError>().is_some() || cause.downcast_ref::<MnnError>().is_some()
        {
            return EXIT_NUMERICAL;
        }
        if cause.downcast_ref::<GalerkinError>().is_some() {
            return 1;
        }
    }
    1
}

#[derive(Debug, Parser)]
#[command(
    name = "etcpde",
    version,
    about = "Switching event-triggered control of semilinear parabolic PDEs"
)]
pub struct Cli {
    /// Config file, or the name of a bundled one (example1, example2).
    #[arg(long, global = true)]
    pub config: Option<String>,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Overrides the identification seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the certificate margin.
    #[arg(long, global = true)]
    pub margin: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Stability,
    NoDisturbance,
    Hinf,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Stability => Mode::Stability,
            ModeArg::NoDisturbance => Mode::NoDisturbance,
            ModeArg::Hinf => Mode::Hinf,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Eigenbasis and slow-system matrices.
    Basis,
    /// Network weights and approximation bound.
    Identify,
    /// Gain synthesis; needs the identify artifacts.
    Synthesize {
        /// Directory with the identify artifacts (default: --out-dir).
        #[arg(long)]
        network: Option<PathBuf>,
    },
    /// Slow-model and full-plant closed loops for a certificate.
    Simulate {
        #[arg(long)]
        certificate: Option<PathBuf>,
    },
    /// Switching against static triggering.
    CompareTriggers {
        #[arg(long)]
        certificate: Option<PathBuf>,
    },
    /// Attenuation-level minimization.
    HinfOptimize {
        #[arg(long)]
        network: Option<PathBuf>,
    },
    /// Exact eigenvalue checks of a certificate file.
    Verify {
        #[arg(long)]
        certificate: PathBuf,
        #[arg(long, value_enum, default_value = "stability")]
        mode: ModeArg,
    },
    /// All stages plus the check table.
    RunPipeline,
    /// Plot-ready CSVs from trace files.
    ExportPlots {
        /// Closed-loop trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Field dump written by `simulate`; needs --pde-trace and --config.
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long)]
        pde_trace: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let name = cli
        .config
        .as_deref()
        .ok_or_else(|| anyhow!("--config is required for this command"))?;
    let mut cfg = ExperimentConfig::load(name)?;
    if let Some(s) = cli.seed {
        cfg.identification.seed = s;
    }
    if let Some(m) = cli.margin {
        cfg.synthesis.margin = m;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn rows(m: &nalgebra::DMatrix<f64>) -> String {
    let r: Vec<String> = m
        .row_iter()
        .map(|row| {
            row.iter()
                .map(|v| format!("{:.6}", if v.abs() < 1e-12 { 0.0 } else { *v }))
                .collect::<Vec<_>>()
                .join(", ")
        })
        .collect();
    format!("[{}]", r.join("; "))
}

fn or_out(p: &Option<PathBuf>, out: &Path, default: &str) -> PathBuf {
    p.clone().unwrap_or_else(|| {
        if default.is_empty() {
            out.to_path_buf()
        } else {
            out.join(default)
        }
    })
}

/// Runs one command and prints a short report to stdout.
pub fn run(cli: &Cli) -> Result<()> {
    let out = &cli.out_dir;
    match &cli.command {
        Command::Basis => {
            let r = stages::basis(&load_config(cli)?, out)?;
            println!("eigenvalues: {:?}", r.eigenvalues);
            let sys = &r.slow_system;
            for (name, m) in [
                ("A_s", &sys.a_s),
                ("B_2", &sys.b2),
                ("B_1", &sys.b1),
                ("C", &sys.c),
            ] {
                println!("{name} = {}", rows(m));
            }
        }
        Command::Identify => {
            let (_, r) = stages::identify(&load_config(cli)?, out)?;
            println!(
                "network: {:?}, delta {}, measured {:.4e}",
                r.source, r.delta, r.measured_delta
            );
        }
        Command::Synthesize { network } => {
            let cert = stages::synthesize(&load_config(cli)?, out, &or_out(network, out, ""))?;
            println!("K = {}", rows(&cert.k.transpose()));
            println!(
                "beta1 = {}, Lambda = {}",
                cert.beta1,
                cert.params.lambda[(0, 0)]
            );
        }
        Command::Simulate { certificate } => {
            let r = stages::simulate_stage(
                &load_config(cli)?,
                out,
                &or_out(certificate, out, stages::CERTIFICATE),
            )?;
            println!(
                "slow: {} events, final norm {:.4e}; full plant: {} events, final norm {:.4e}",
                r.slow_triggers.count,
                r.slow_final_norm,
                r.pde_triggers.count,
                r.pde_closed_final_norm
            );
        }
        Command::CompareTriggers { certificate } => {
            let rows = stages::compare_triggers(
                &load_config(cli)?,
                out,
                &or_out(certificate, out, stages::CERTIFICATE),
            )?;
            println!("{:>8} {:>10} {:>7} {:>12}", "h", "law", "count", "min gap");
            for r in rows {
                println!(
                    "{:>8} {:>10} {:>7} {:>12}",
                    r.h,
                    r.law,
                    r.count,
                    r.min_inter_event
                        .map(|v| format!("{v:.4}"))
                        .unwrap_or_default()
                );
            }
        }
        Command::HinfOptimize { network } => {
            let r = stages::hinf_optimize(&load_config(cli)?, out, &or_out(network, out, ""))?;
            println!(
                "gamma = {:.6} after {} accepted steps",
                r.gamma_opt,
                r.rho_history.len()
            );
        }
        Command::Verify { certificate, mode } => {
            let r = stages::verify(certificate, (*mode).into(), cli.margin.unwrap_or(1e-6))?;
            for c in &r.checks {
                println!(
                    "{:<24} {:>14.6e} {}",
                    c.name,
                    c.value,
                    if c.passed { "ok" } else { "FAIL" }
                );
            }
            if !r.passed() {
                return Err(
                    Exit::assertion(format!("certificate rejected: {}", r.summary())).into(),
                );
            }
        }
        Command::RunPipeline => {
            let checks = stages::run_pipeline(&load_config(cli)?, out)?;
            for c in &checks {
                println!(
                    "{} {:<48} {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.value
                );
            }
            let hard: Vec<&str> = checks
                .iter()
                .filter(|c| c.hard && !c.passed)
                .map(|c| c.name.as_str())
                .collect();
            if !hard.is_empty() {
                return Err(Exit::assertion(format!("failed: {}", hard.join("; "))).into());
            }
        }
        Command::ExportPlots {
            trace,
            field,
            pde_trace,
        } => {
            let field_args = match (field, pde_trace) {
                (Some(f), Some(t)) => {
                    let cfg = load_config(cli)?;
                    Some((f.as_path(), t.as_path(), cfg.plant.domain))
                }
                (None, None) => None,
                _ => return Err(anyhow!("--field and --pde-trace go together")),
            };
            for p in stages::export_plots(trace.as_deref(), field_args, out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}
