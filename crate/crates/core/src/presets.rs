//! The two bundled case studies: a catalytic rod with a quadratic reaction
//! and a one-way traffic stretch, each with its published network and
//! synthesis parameters.

use crate::galerkin::{analytic_dirichlet_basis, assemble_slow_system, modal_nonlinearity, GalerkinError, ModalBasis, SlowSystem, SturmLiouvilleSpec};
use crate::lmi::assembly::SynthesisParams;
use crate::mnn::{published_network, sector_bounds, Mnn, Published};
use crate::pde_sim::{PlantModel, Reaction};
use crate::profile::builtin;
use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub plant: PlantModel,
    pub diffusion: f64,
    pub m: usize,
    /// Initial slow state used by reduced-model runs.
    pub x0: DVector<f64>,
    pub network: Published,
    /// Published approximation bound of the network.
    pub delta: f64,
    pub h: f64,
    pub eps: f64,
    pub lambda: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Gain reported alongside the parameters.
    pub reference_k: DMatrix<f64>,
}

fn profiles(names: &[&str]) -> Vec<crate::profile::Profile> {
    names.iter().map(|n| builtin(n).expect("built-in profile")).collect()
}

/// Rod on [0, pi]: xi_t = xi_pp + 1.65 xi + 1.5 xi^2 + b2 u + b1 d.
pub fn example1() -> Preset {
    Preset {
        name: "example1",
        plant: PlantModel {
            spec: SturmLiouvilleSpec::dirichlet_heat(1.0, (0.0, PI)),
            reaction: Reaction { coeffs: vec![1.65, 1.5] },
            b2: profiles(&["example1.b2.0", "example1.b2.1"]),
            b1: profiles(&["example1.b1"]),
            c_bar: profiles(&["example1.c_bar"]),
            xi0: builtin("example1.xi0").expect("built-in profile"),
            d1: 0.1,
        },
        diffusion: 1.0,
        m: 2,
        x0: DVector::from_vec(vec![-0.4, 0.1]),
        network: Published::Example1,
        delta: 0.0509,
        h: 0.11,
        eps: 0.01,
        lambda: 3490.1,
        beta1: 2906.1,
        beta2: 1.11,
        reference_k: DMatrix::from_column_slice(2, 1, &[-2.3002, -0.5612]),
    }
}

/// Traffic density with diffusion 0.5, growth 0.1 and interaction -0.01.
/// The domain is [0, pi] so that the modes sin(jp) vanish at both ends;
/// `example2_long` keeps the declared road length instead.
pub fn example2() -> Preset {
    Preset {
        name: "example2",
        plant: PlantModel {
            spec: SturmLiouvilleSpec::dirichlet_heat(0.5, (0.0, PI)),
            reaction: Reaction { coeffs: vec![0.1, -0.01] },
            b2: profiles(&["example1.b2.0", "example1.b2.1"]),
            b1: profiles(&["example1.b1"]),
            c_bar: profiles(&["example1.c_bar"]),
            xi0: builtin("example2.xi0").expect("built-in profile"),
            d1: 0.1,
        },
        diffusion: 0.5,
        m: 2,
        x0: DVector::from_vec(vec![0.2 * (2.0 / PI).sqrt(), 2.0 / 15.0 * (2.0 / PI).sqrt()]),
        network: Published::Example2,
        delta: 0.0114,
        h: 0.11,
        eps: 0.05,
        lambda: 251.252,
        beta1: 257.595,
        beta2: 1.0,
        reference_k: DMatrix::from_column_slice(2, 1, &[-1.1126, 0.4666]),
    }
}

/// Example 2 on the declared road [0, 100].
pub fn example2_long() -> Preset {
    let mut p = example2();
    p.name = "example2_long";
    p.plant.spec.domain = (0.0, 100.0);
    p
}

pub fn by_name(name: &str) -> Option<Preset> {
    match name {
        "example1" => Some(example1()),
        "example2" => Some(example2()),
        "example2_long" => Some(example2_long()),
        _ => None,
    }
}

impl Preset {
    pub fn basis(&self) -> Result<ModalBasis, GalerkinError> {
        analytic_dirichlet_basis(self.diffusion, self.plant.spec.domain, self.m, 64)
    }

    pub fn slow_system(&self, basis: &ModalBasis) -> Result<SlowSystem, GalerkinError> {
        assemble_slow_system(basis, &self.plant.b2, &self.plant.b1, &self.plant.c_bar)
    }

    pub fn published_network(&self) -> Mnn {
        published_network(self.network)
    }

    /// Exact slow part of the pointwise reaction.
    pub fn true_nonlinearity(&self, basis: &ModalBasis) -> impl Fn(&DVector<f64>) -> DVector<f64> + '_ {
        let basis = basis.clone();
        move |x| modal_nonlinearity(&basis, &|v| self.plant.reaction.eval(v), x)
    }

    pub fn synthesis_params(&self, sys: &SlowSystem, net: &Mnn, delta: f64) -> SynthesisParams {
        let sb = sector_bounds(net);
        SynthesisParams {
            a_s: sys.a_s.clone(),
            b2: sys.b2.clone(),
            b1: sys.b1.clone(),
            c: sys.c.clone(),
            w: net.w.clone(),
            v: net.v.clone(),
            delta,
            g_min: sb.g_min.clone(),
            g_max: sb.g_max.clone(),
            h: self.h,
            eps: self.eps,
            lambda: DMatrix::identity(sys.n_y(), sys.n_y()) * self.lambda,
            alpha: 0.0,
            beta2: self.beta2,
            beta1: Some(self.beta1),
            d1: self.plant.d1,
        }
    }

    /// Slow model, published network and published delta in one call.
    pub fn published_params(&self) -> Result<(ModalBasis, SlowSystem, SynthesisParams), GalerkinError> {
        let basis = self.basis()?;
        let sys = self.slow_system(&basis)?;
        let params = self.synthesis_params(&sys, &self.published_network(), self.delta);
        Ok((basis, sys, params))
    }
}
