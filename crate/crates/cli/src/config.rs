//! Experiment configuration: one TOML file with plant, reduction,
//! identification, synthesis and simulation sections.

use anyhow::{anyhow, bail, Context, Result};
use etcpde::galerkin::{
    analytic_dirichlet_basis, assemble_slow_system, eigensolve_sturm_liouville, ModalBasis,
    SlowSystem, SturmLiouvilleSpec,
};
use etcpde::lmi::assembly::{Mode, SynthesisParams};
use etcpde::lmi::synthesis::SynthesisOptions;
use etcpde::mnn::{sector_bounds, LmConfig, Mnn, Published, Region};
use etcpde::pde_sim::{DisturbanceModel, PlantModel, Reaction, SimConfig};
use etcpde::profile::{builtin, Profile, BUILTIN_NAMES};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// A profile given by built-in name or as inline terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileRef {
    Named(String),
    Inline(Profile),
}

impl ProfileRef {
    pub fn resolve(&self) -> Result<Profile> {
        match self {
            ProfileRef::Named(n) => builtin(n).ok_or_else(|| {
                anyhow!(
                    "unknown built-in profile '{n}' (known: {})",
                    BUILTIN_NAMES.join(", ")
                )
            }),
            ProfileRef::Inline(p) => Ok(p.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    /// Constant diffusion coefficient; Dirichlet ends.
    pub diffusion: f64,
    pub domain: [f64; 2],
    /// Reaction polynomial coefficients of x, x^2, ...
    pub reaction: Vec<f64>,
    pub b2: Vec<ProfileRef>,
    pub b1: Vec<ProfileRef>,
    pub c_bar: Vec<ProfileRef>,
    pub xi0: ProfileRef,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisMethod {
    Analytic,
    FiniteDifference,
}

fn default_panels() -> usize {
    64
}

fn default_fd_grid() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReductionSection {
    pub m: usize,
    pub method: BasisMethod,
    /// Grid intervals of the finite-difference eigensolve.
    #[serde(default = "default_fd_grid")]
    pub grid_n: usize,
    #[serde(default = "default_panels")]
    pub quadrature_panels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkSource {
    Published,
    Trained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Short runs of the full plant measured by point sensors.
    Pde,
    /// Short runs of the exact slow dynamics.
    Modal,
}

fn default_spacing() -> f64 {
    0.1
}

fn default_rays() -> u32 {
    5
}

fn default_substeps() -> usize {
    10
}

fn default_sensors() -> usize {
    32
}

fn default_pde_grid() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentificationSection {
    pub source: NetworkSource,
    /// Which bundled weight table, for `source = "published"`.
    pub published: Option<Published>,
    /// Approximation bound; estimated on the region when absent.
    pub delta: Option<f64>,
    pub n_h: usize,
    pub q: f64,
    pub r: f64,
    pub dt_s: f64,
    pub region: Region,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    #[serde(default = "default_rays")]
    pub rays: u32,
    pub seed: u64,
    pub sampler: SamplerKind,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default = "default_sensors")]
    pub sensors: usize,
    #[serde(default = "default_pde_grid")]
    pub grid_n: usize,
    #[serde(default)]
    pub lm: LmConfig,
}

fn default_omega() -> f64 {
    1e-3
}

fn default_margin() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSection {
    pub h: f64,
    pub eps: f64,
    /// Lambda = lambda * I.
    pub lambda: f64,
    #[serde(default)]
    pub alpha: f64,
    pub beta1: Option<f64>,
    pub beta2: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
    pub mode: Mode,
    #[serde(default)]
    pub optimize_gamma: bool,
    #[serde(default = "default_omega")]
    pub omega_rho: f64,
    pub adjust_grid: Option<Vec<f64>>,
    pub gamma_lambda_grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlowModelKind {
    /// Exact slow nonlinearity.
    Truth,
    /// Identified network only.
    Network,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub t_end: f64,
    /// Slow-model step; h / 100 when absent.
    pub dt: Option<f64>,
    pub x0: Vec<f64>,
    pub d1: f64,
    pub disturbance: DisturbanceModel,
    pub model: SlowModelKind,
    /// Waiting times of the trigger comparison; the synthesis h when empty.
    #[serde(default)]
    pub compare_h: Vec<f64>,
    pub pde: SimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub plant: PlantSection,
    pub reduction: ReductionSection,
    pub identification: IdentificationSection,
    pub synthesis: SynthesisSection,
    pub simulation: SimulationSection,
}

/// Bundled configurations.
pub const BUNDLED: &[(&str, &str)] = &[
    ("example1", include_str!("../configs/example1.toml")),
    ("example2", include_str!("../configs/example2.toml")),
];

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// A path, or the name of a bundled configuration.
    pub fn load(path_or_name: &str) -> Result<Self> {
        if let Some((_, text)) = BUNDLED.iter().find(|(n, _)| *n == path_or_name) {
            return Self::parse(text);
        }
        let text = std::fs::read_to_string(Path::new(path_or_name))
            .with_context(|| format!("cannot read config file {path_or_name}"))?;
        Self::parse(&text)
    }

    /// Checks every reference and range before any computation.
    pub fn validate(&self) -> Result<()> {
        let p = &self.plant;
        for r in
            p.b2.iter()
                .chain(&p.b1)
                .chain(&p.c_bar)
                .chain(std::iter::once(&p.xi0))
        {
            r.resolve()?;
        }
        if !(p.diffusion > 0.0) || !(p.domain[1] > p.domain[0]) {
            bail!("plant: diffusion must be positive and the domain non-empty");
        }
        if p.b2.is_empty() || p.c_bar.is_empty() || p.b1.is_empty() {
            bail!("plant: b2, b1 and c_bar need at least one profile each");
        }
        if self.reduction.m == 0 {
            bail!("reduction: m must be at least 1");
        }
        let id = &self.identification;
        if id.source == NetworkSource::Published && id.published.is_none() {
            bail!("identification: source = \"published\" needs `published`");
        }
        if id.region.lower.len() != self.reduction.m || id.region.upper.len() != self.reduction.m {
            bail!(
                "identification: region bounds need m = {} entries",
                self.reduction.m
            );
        }
        let s = &self.synthesis;
        if !(s.h > 0.0)
            || !(s.eps >= 0.0)
            || !(s.lambda > 0.0)
            || !(s.beta2 > 0.0)
            || !(s.margin >= 0.0)
        {
            bail!("synthesis: need h > 0, eps >= 0, lambda > 0, beta2 > 0, margin >= 0");
        }
        if s.mode == Mode::Hinf {
            bail!("synthesis: mode must be stability or no_disturbance; use optimize_gamma for the attenuation design");
        }
        let sim = &self.simulation;
        if sim.x0.len() != self.reduction.m {
            bail!("simulation: x0 needs m = {} entries", self.reduction.m);
        }
        if !(sim.t_end > 0.0) || !(sim.d1 >= 0.0) {
            bail!("simulation: need t_end > 0 and d1 >= 0");
        }
        Ok(())
    }

    pub fn plant_model(&self) -> Result<PlantModel> {
        let p = &self.plant;
        let all = |v: &[ProfileRef]| v.iter().map(|r| r.resolve()).collect::<Result<Vec<_>>>();
        Ok(PlantModel {
            spec: SturmLiouvilleSpec::dirichlet_heat(p.diffusion, (p.domain[0], p.domain[1])),
            reaction: Reaction {
                coeffs: p.reaction.clone(),
            },
            b2: all(&p.b2)?,
            b1: all(&p.b1)?,
            c_bar: all(&p.c_bar)?,
            xi0: p.xi0.resolve()?,
            d1: self.simulation.d1,
        })
    }

    pub fn basis(&self) -> Result<ModalBasis> {
        let r = &self.reduction;
        let p = &self.plant;
        let b = match r.method {
            BasisMethod::Analytic => analytic_dirichlet_basis(
                p.diffusion,
                (p.domain[0], p.domain[1]),
                r.m,
                r.quadrature_panels,
            )?,
            BasisMethod::FiniteDifference => {
                eigensolve_sturm_liouville(&self.plant_model()?.spec, r.grid_n, r.m)?
            }
        };
        Ok(b)
    }

    pub fn slow_system(&self, basis: &ModalBasis) -> Result<SlowSystem> {
        let plant = self.plant_model()?;
        Ok(assemble_slow_system(
            basis,
            &plant.b2,
            &plant.b1,
            &plant.c_bar,
        )?)
    }

    pub fn synthesis_params(&self, sys: &SlowSystem, net: &Mnn, delta: f64) -> SynthesisParams {
        let s = &self.synthesis;
        let sb = sector_bounds(net);
        SynthesisParams {
            a_s: sys.a_s.clone(),
            b2: sys.b2.clone(),
            b1: sys.b1.clone(),
            c: sys.c.clone(),
            w: net.w.clone(),
            v: net.v.clone(),
            delta,
            g_min: sb.g_min,
            g_max: sb.g_max,
            h: s.h,
            eps: s.eps,
            lambda: DMatrix::identity(sys.n_y(), sys.n_y()) * s.lambda,
            alpha: s.alpha,
            beta2: s.beta2,
            beta1: s.beta1,
            d1: self.simulation.d1,
        }
    }

    pub fn synthesis_options(&self) -> SynthesisOptions {
        let s = &self.synthesis;
        let mut o = SynthesisOptions {
            margin: s.margin,
            solver_margin: 1.5 * s.margin.max(1e-9),
            mode: s.mode,
            ..SynthesisOptions::default()
        };
        if let Some(g) = &s.adjust_grid {
            o.adjust_grid = g.clone();
        }
        if let Some(g) = &s.gamma_lambda_grid {
            o.gamma_lambda_grid = g.clone();
        }
        o
    }

    pub fn x0(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.simulation.x0)
    }

    /// Waiting times compared by `compare-triggers`.
    pub fn compare_h(&self) -> Vec<f64> {
        if self.simulation.compare_h.is_empty() {
            vec![self.synthesis.h]
        } else {
            self.simulation.compare_h.clone()
        }
    }

    pub fn lm(&self) -> LmConfig {
        self.identification.lm.clone()
    }
}
