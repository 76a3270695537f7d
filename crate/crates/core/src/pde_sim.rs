//! Method-of-lines simulation of the full parabolic plant.
//!
//! Diffusion is stepped with backward Euler (one tridiagonal solve per
//! step); advection, reaction and the inputs are explicit.

use crate::galerkin::{Boundary, ModalBasis, SturmLiouvilleSpec};
use crate::profile::Profile;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation setup: {0}")]
    Invalid(String),
    #[error("field diverged at t = {t} (|xi| > 1e6)")]
    Divergence { t: f64, partial: Box<FieldTrace> },
    #[error("NaN in field at t = {t}")]
    NotANumber { t: f64 },
}

/// Pointwise reaction f(x) = sum_k coeffs[k] * x^(k+1), so f(0) = 0.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Reaction {
    pub coeffs: Vec<f64>,
}

impl Reaction {
    pub fn eval(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for c in self.coeffs.iter().rev() {
            acc = (acc + c) * x;
        }
        acc
    }

    /// Largest sampled difference quotient on [-r, r].
    pub fn lipschitz_estimate(&self, r: f64) -> f64 {
        let n = 400;
        let mut best: f64 = 0.0;
        let mut prev = self.eval(-r);
        for k in 1..=n {
            let x = -r + 2.0 * r * k as f64 / n as f64;
            let v = self.eval(x);
            best = best.max(((v - prev) / (2.0 * r / n as f64)).abs());
            prev = v;
        }
        best
    }
}

/// The full plant: operator, reaction, actuator/disturbance/output profiles,
/// initial profile and disturbance bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantModel {
    pub spec: SturmLiouvilleSpec,
    pub reaction: Reaction,
    pub b2: Vec<Profile>,
    pub b1: Vec<Profile>,
    pub c_bar: Vec<Profile>,
    pub xi0: Profile,
    pub d1: f64,
}

/// Named disturbance signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisturbanceModel {
    Zero,
    /// d = D1
    Constant,
    /// d = D1 exp(-rate t)
    DecayingExp { rate: f64 },
    /// d = D1 exp(-rate t) sin(freq t)
    DecayingSine { rate: f64, freq: f64 },
    /// Sum of random-phase sinusoids below `cutoff` (rad/time), scaled into [-D1, D1].
    BandLimitedNoise { seed: u64, cutoff: f64, components: usize },
}

impl Default for DisturbanceModel {
    fn default() -> Self {
        DisturbanceModel::DecayingSine { rate: 1.0, freq: 5.0 }
    }
}

/// A disturbance signal with n_d channels and amplitude bound D1.
#[derive(Debug, Clone)]
pub struct Disturbance {
    pub model: DisturbanceModel,
    pub amplitude: f64,
    pub channels: usize,
    tones: Vec<(f64, f64, f64)>,
}

impl Disturbance {
    pub fn new(model: DisturbanceModel, amplitude: f64, channels: usize) -> Self {
        let mut tones = Vec::new();
        if let DisturbanceModel::BandLimitedNoise { seed, cutoff, components } = &model {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let n = (*components).max(1);
            let raw: Vec<(f64, f64, f64)> = (0..n)
                .map(|_| {
                    (
                        rng.gen_range(0.2..1.0),
                        rng.gen_range(0.0..*cutoff),
                        rng.gen_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect();
            let total: f64 = raw.iter().map(|t| t.0).sum();
            tones = raw.into_iter().map(|(a, w, p)| (a / total, w, p)).collect();
        }
        Disturbance { model, amplitude, channels, tones }
    }

    pub fn zero(channels: usize) -> Self {
        Self::new(DisturbanceModel::Zero, 0.0, channels)
    }

    /// Scalar waveform before channel splitting, within [-D1, D1].
    pub fn scalar(&self, t: f64) -> f64 {
        let d1 = self.amplitude;
        let v = match &self.model {
            DisturbanceModel::Zero => 0.0,
            DisturbanceModel::Constant => d1,
            DisturbanceModel::DecayingExp { rate } => d1 * (-rate * t).exp(),
            DisturbanceModel::DecayingSine { rate, freq } => d1 * (-rate * t).exp() * (freq * t).sin(),
            DisturbanceModel::BandLimitedNoise { .. } => {
                d1 * self.tones.iter().map(|(a, w, p)| a * (w * t + p).sin()).sum::<f64>()
            }
        };
        v.clamp(-d1.abs(), d1.abs())
    }

    /// Channel vector with Euclidean norm at most D1.
    pub fn eval(&self, t: f64) -> DVector<f64> {
        let s = self.scalar(t) / (self.channels.max(1) as f64).sqrt();
        DVector::from_element(self.channels, s)
    }
}

/// Stored simulation output.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FieldTrace {
    pub times: Vec<f64>,
    pub grid: Vec<f64>,
    pub fields: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub l2norms: Vec<f64>,
    pub notes: Vec<String>,
}

impl FieldTrace {
    /// CSV with columns t, y_1.., norm.
    pub fn to_csv(&self) -> String {
        let ny = self.outputs.first().map(|y| y.len()).unwrap_or(0);
        let mut s = String::from("t");
        for i in 0..ny {
            let _ = write!(s, ",y_{}", i + 1);
        }
        s.push_str(",norm\n");
        for k in 0..self.times.len() {
            let _ = write!(s, "{:.17e}", self.times[k]);
            for v in &self.outputs[k] {
                let _ = write!(s, ",{v:.17e}");
            }
            let _ = writeln!(s, ",{:.17e}", self.l2norms[k]);
        }
        s
    }

    /// Binary dump: u64 nodes-per-row, u64 rows, then little-endian f64 rows.
    pub fn write_binary<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let cols = self.grid.len() as u64;
        let rows = self.fields.len() as u64;
        w.write_all(&cols.to_le_bytes())?;
        w.write_all(&rows.to_le_bytes())?;
        for row in &self.fields {
            for v in row {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    /// Reads a dump written by [`write_binary`](Self::write_binary).
    pub fn read_binary(bytes: &[u8]) -> Option<(usize, Vec<Vec<f64>>)> {
        let word = |i: usize| -> Option<[u8; 8]> { bytes.get(i..i + 8)?.try_into().ok() };
        let cols = u64::from_le_bytes(word(0)?) as usize;
        let rows = u64::from_le_bytes(word(8)?) as usize;
        let mut out = Vec::with_capacity(rows);
        let mut at = 16;
        for _ in 0..rows {
            let mut r = Vec::with_capacity(cols);
            for _ in 0..cols {
                r.push(f64::from_le_bytes(word(at)?));
                at += 8;
            }
            out.push(r);
        }
        Some((cols, out))
    }
}

/// Simulation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Number of grid intervals.
    pub grid_n: usize,
    pub dt: f64,
    pub t_end: f64,
    /// Store every `stride`-th step (the last step is always stored).
    pub stride: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { grid_n: 256, dt: 1e-3, t_end: 10.0, stride: 10 }
    }
}

/// Composite Simpson weights on a uniform grid with n intervals
/// (3/8 rule on the last three intervals when n is odd).
pub fn simpson_weights(n: usize, dx: f64) -> Vec<f64> {
    let mut w = vec![0.0; n + 1];
    if n == 1 {
        w[0] = 0.5 * dx;
        w[1] = 0.5 * dx;
        return w;
    }
    let simpson_end = if n % 2 == 0 { n } else { n - 3 };
    let mut i = 0;
    while i + 2 <= simpson_end {
        w[i] += dx / 3.0;
        w[i + 1] += 4.0 * dx / 3.0;
        w[i + 2] += dx / 3.0;
        i += 2;
    }
    if simpson_end < n {
        let s = simpson_end;
        let c = 3.0 * dx / 8.0;
        w[s] += c;
        w[s + 1] += 3.0 * c;
        w[s + 2] += 3.0 * c;
        w[s + 3] += c;
    }
    w
}

/// y = int c_bar xi dp per output channel on the grid.
pub fn output(field: &[f64], c_bar: &[Profile], grid: &[f64]) -> Vec<f64> {
    let n = grid.len() - 1;
    let w = simpson_weights(n, (grid[n] - grid[0]) / n as f64);
    c_bar
        .iter()
        .map(|c| (0..=n).map(|i| w[i] * c.eval(grid[i]) * field[i]).sum())
        .collect()
}

/// ||xi||_2 over the grid.
pub fn spatial_l2_norm(field: &[f64], grid: &[f64]) -> f64 {
    let n = grid.len() - 1;
    let w = simpson_weights(n, (grid[n] - grid[0]) / n as f64);
    (0..=n).map(|i| w[i] * field[i] * field[i]).sum::<f64>().max(0.0).sqrt()
}

/// Precomputed stepping data for one grid and time step.
#[derive(Debug, Clone)]
pub struct PdeStepper {
    pub grid: Vec<f64>,
    pub dt: f64,
    dx: f64,
    left: Boundary,
    right: Boundary,
    first: usize,
    last: usize,
    // diffusion operator rows on unknown nodes: lower, diag, upper
    lo: Vec<f64>,
    di: Vec<f64>,
    up: Vec<f64>,
    z1: Vec<f64>,
    b2: Vec<Vec<f64>>,
    b1: Vec<Vec<f64>>,
    c_w: Vec<Vec<f64>>,
    quad_w: Vec<f64>,
    reaction: Reaction,
}

impl PdeStepper {
    pub fn new(plant: &PlantModel, grid_n: usize, dt: f64) -> Result<Self, SimError> {
        if grid_n < 64 {
            return Err(SimError::Invalid(format!("grid_n = {grid_n} < 64")));
        }
        if !(dt > 0.0) {
            return Err(SimError::Invalid("dt must be positive".into()));
        }
        plant
            .spec
            .validate()
            .map_err(|e| SimError::Invalid(e.to_string()))?;
        let (a, b) = plant.spec.domain;
        let n = grid_n;
        let dx = (b - a) / n as f64;
        let grid: Vec<f64> = (0..=n).map(|i| a + i as f64 * dx).collect();
        let left = plant.spec.left;
        let right = plant.spec.right;
        let first = if left.is_dirichlet() { 1 } else { 0 };
        let last = if right.is_dirichlet() { n - 1 } else { n };
        let z2 = &plant.spec.z2;
        let mut lo = vec![0.0; n + 1];
        let mut di = vec![0.0; n + 1];
        let mut up = vec![0.0; n + 1];
        for i in first..=last {
            let p = grid[i];
            if i == 0 {
                // ghost node from h1 xi + h2 xi_p = 0: xi_{-1} = xi_1 + 2 dx (h1/h2) xi_0
                let zr = z2.eval(p + 0.5 * dx);
                let g = 2.0 * dx * left.h1 / left.h2;
                up[i] = 2.0 * zr / (dx * dx);
                di[i] = (-2.0 * zr + zr * g) / (dx * dx);
            } else if i == n {
                let zl = z2.eval(p - 0.5 * dx);
                let g = 2.0 * dx * right.h1 / right.h2;
                lo[i] = 2.0 * zl / (dx * dx);
                di[i] = (-2.0 * zl - zl * g) / (dx * dx);
            } else {
                let zl = z2.eval(p - 0.5 * dx);
                let zr = z2.eval(p + 0.5 * dx);
                lo[i] = zl / (dx * dx);
                up[i] = zr / (dx * dx);
                di[i] = -(zl + zr) / (dx * dx);
            }
        }
        let z1: Vec<f64> = grid.iter().map(|&p| plant.spec.z1.eval(p)).collect();
        let max_z1 = z1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if dt * max_z1 / dx > 1.0 {
            return Err(SimError::Invalid(format!(
                "explicit advection step dt*|z1|/dx = {} exceeds 1",
                dt * max_z1 / dx
            )));
        }
        let r0 = grid.iter().map(|&p| plant.xi0.eval(p).abs()).fold(0.0, f64::max) + 1.0;
        let lip = plant.reaction.lipschitz_estimate(2.0 * r0);
        if dt * lip > 0.5 {
            return Err(SimError::Invalid(format!(
                "explicit reaction step dt*Lip(f) = {} exceeds 0.5",
                dt * lip
            )));
        }
        let tab = |ps: &[Profile]| -> Vec<Vec<f64>> {
            ps.iter().map(|pr| grid.iter().map(|&p| pr.eval(p)).collect()).collect()
        };
        let quad_w = simpson_weights(n, dx);
        let c_w = plant
            .c_bar
            .iter()
            .map(|c| grid.iter().zip(&quad_w).map(|(&p, w)| c.eval(p) * w).collect())
            .collect();
        Ok(PdeStepper {
            b2: tab(&plant.b2),
            b1: tab(&plant.b1),
            c_w,
            quad_w,
            grid,
            dt,
            dx,
            left,
            right,
            first,
            last,
            lo,
            di,
            up,
            z1,
            reaction: plant.reaction.clone(),
        })
    }

    /// Tabulates a profile on the grid, zeroing Dirichlet end nodes. Returns
    /// whether the profile had to be modified to satisfy the boundary.
    pub fn initial_field(&self, xi0: &dyn Fn(f64) -> f64) -> (Vec<f64>, bool) {
        let mut f: Vec<f64> = self.grid.iter().map(|&p| xi0(p)).collect();
        let n = f.len() - 1;
        let mut modified = false;
        if self.first == 1 {
            modified |= f[0].abs() > 1e-12;
            f[0] = 0.0;
        }
        if self.last == n - 1 {
            modified |= f[n].abs() > 1e-12;
            f[n] = 0.0;
        }
        (f, modified)
    }

    pub fn output(&self, field: &[f64]) -> Vec<f64> {
        self.c_w
            .iter()
            .map(|c| c.iter().zip(field).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn norm(&self, field: &[f64]) -> f64 {
        self.quad_w
            .iter()
            .zip(field)
            .map(|(w, v)| w * v * v)
            .sum::<f64>()
            .max(0.0)
            .sqrt()
    }

    /// One IMEX step with inputs u and disturbance d held over the step.
    pub fn step(&self, field: &mut [f64], u: &[f64], d: &[f64]) {
        let n = field.len() - 1;
        let dt = self.dt;
        let mut rhs = vec![0.0; n + 1];
        for i in self.first..=self.last {
            let x = field[i];
            let slope = if i == 0 {
                -(self.left.h1 / self.left.h2) * x
            } else if i == n {
                -(self.right.h1 / self.right.h2) * x
            } else {
                (field[i + 1] - field[i - 1]) / (2.0 * self.dx)
            };
            let mut g = self.z1[i] * slope + self.reaction.eval(x);
            for (k, uk) in u.iter().enumerate() {
                g += self.b2[k][i] * uk;
            }
            for (k, dk) in d.iter().enumerate() {
                g += self.b1[k][i] * dk;
            }
            rhs[i] = x + dt * g;
        }
        // (I - dt D) xi_new = rhs, Thomas algorithm on first..=last
        let (s, e) = (self.first, self.last);
        let m = e - s + 1;
        let mut c = vec![0.0; m];
        let mut r = vec![0.0; m];
        let mut prev_c = 0.0;
        let mut prev_r = 0.0;
        for k in 0..m {
            let i = s + k;
            let a = if k > 0 { -dt * self.lo[i] } else { 0.0 };
            let b = 1.0 - dt * self.di[i];
            let cc = if k + 1 < m { -dt * self.up[i] } else { 0.0 };
            let den = b - a * prev_c;
            c[k] = cc / den;
            r[k] = (rhs[i] - a * prev_r) / den;
            prev_c = c[k];
            prev_r = r[k];
        }
        for k in (0..m).rev() {
            let next = if k + 1 < m { field[s + k + 1] } else { 0.0 };
            field[s + k] = r[k] - c[k] * next;
        }
        if s == 1 {
            field[0] = 0.0;
        }
        if e == n - 1 {
            field[n] = 0.0;
        }
    }
}

/// Simulates the plant from its own initial profile.
///
/// The controller, when present, is called once per step with (t, y(t)) and
/// its return value is held over that step; otherwise u = 0.
pub fn simulate(
    plant: &PlantModel,
    controller: Option<&mut dyn FnMut(f64, &[f64]) -> Vec<f64>>,
    disturbance: &Disturbance,
    cfg: &SimConfig,
) -> Result<FieldTrace, SimError> {
    let stepper = PdeStepper::new(plant, cfg.grid_n, cfg.dt)?;
    let (field, modified) = stepper.initial_field(&|p| plant.xi0.eval(p));
    let mut notes = Vec::new();
    if modified {
        notes.push(
            "initial profile violates the Dirichlet boundary; end nodes set to zero".to_string(),
        );
    }
    simulate_field(&stepper, field, plant.b2.len(), controller, disturbance, cfg, notes)
}

/// Simulates from an explicit initial grid field.
pub fn simulate_field(
    stepper: &PdeStepper,
    mut field: Vec<f64>,
    n_u: usize,
    mut controller: Option<&mut dyn FnMut(f64, &[f64]) -> Vec<f64>>,
    disturbance: &Disturbance,
    cfg: &SimConfig,
    notes: Vec<String>,
) -> Result<FieldTrace, SimError> {
    let steps = (cfg.t_end / cfg.dt).round() as usize;
    let stride = cfg.stride.max(1);
    let mut trace = FieldTrace { grid: stepper.grid.clone(), notes, ..Default::default() };
    let store = |trace: &mut FieldTrace, t: f64, f: &[f64], y: Vec<f64>, u: Vec<f64>| {
        trace.times.push(t);
        trace.l2norms.push(stepper.norm(f));
        trace.fields.push(f.to_vec());
        trace.outputs.push(y);
        trace.inputs.push(u);
    };
    for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        let y = stepper.output(&field);
        let u = match controller.as_mut() {
            Some(c) if k < steps => c(t, &y),
            _ => vec![0.0; n_u],
        };
        if k % stride == 0 || k == steps {
            store(&mut trace, t, &field, y, u.clone());
        }
        if k == steps {
            break;
        }
        let d = disturbance.eval(t);
        stepper.step(&mut field, &u, d.as_slice());
        let mut big: f64 = 0.0;
        for v in &field {
            if v.is_nan() {
                return Err(SimError::NotANumber { t: t + cfg.dt });
            }
            big = big.max(v.abs());
        }
        if big > 1e6 {
            return Err(SimError::Divergence { t: t + cfg.dt, partial: Box::new(trace) });
        }
    }
    Ok(trace)
}

/// Projects every stored field of a trace onto the first m modes.
pub fn slow_projection(trace: &FieldTrace, basis: &ModalBasis) -> Vec<DVector<f64>> {
    let grid = &trace.grid;
    let n = grid.len() - 1;
    let (a, b) = (grid[0], grid[n]);
    let w = basis.inner_weights();
    // interpolation positions of the quadrature nodes on the grid
    let pos: Vec<(usize, f64)> = basis
        .quad
        .nodes
        .iter()
        .map(|&p| {
            let x = ((p - a) / (b - a) * n as f64).clamp(0.0, n as f64);
            let i = (x.floor() as usize).min(n - 1);
            (i, x - i as f64)
        })
        .collect();
    trace
        .fields
        .iter()
        .map(|f| {
            let mut out = DVector::zeros(basis.m);
            for (q, &(i, t)) in pos.iter().enumerate() {
                let v = (1.0 - t) * f[i] + t * f[i + 1];
                for j in 0..basis.m {
                    out[j] += w[q] * v * basis.table[(q, j)];
                }
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn heat_plant(xi0: Profile) -> PlantModel {
        PlantModel {
            spec: SturmLiouvilleSpec::dirichlet_heat(1.0, (0.0, PI)),
            reaction: Reaction::default(),
            b2: vec![],
            b1: vec![],
            c_bar: vec![Profile::sin((2.0 / PI).sqrt(), 1.0)],
            xi0,
            d1: 0.0,
        }
    }

    #[test]
    fn zero_is_equilibrium() {
        let plant = heat_plant(Profile::zero());
        let cfg = SimConfig { t_end: 0.5, ..Default::default() };
        let tr = simulate(&plant, None, &Disturbance::zero(0), &cfg).unwrap();
        assert!(tr.fields.iter().all(|f| f.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn heat_decay_rate() {
        let plant = heat_plant(Profile::sin(1.0, 1.0));
        let cfg = SimConfig { t_end: 1.0, ..Default::default() };
        let tr = simulate(&plant, None, &Disturbance::zero(0), &cfg).unwrap();
        let ratio = tr.l2norms.last().unwrap() / tr.l2norms[0];
        assert!((ratio / (-1.0f64).exp() - 1.0).abs() < 0.02);
    }

    #[test]
    fn simpson_weights_integrate_cubics() {
        for n in [6usize, 7, 9] {
            let w = simpson_weights(n, 1.0 / n as f64);
            let s: f64 = (0..=n).map(|i| w[i] * (i as f64 / n as f64).powi(3)).sum();
            assert!((s - 0.25).abs() < 1e-14, "{n}");
        }
    }

    #[test]
    fn disturbance_stays_bounded() {
        for model in [
            DisturbanceModel::Constant,
            DisturbanceModel::default(),
            DisturbanceModel::DecayingExp { rate: 0.5 },
            DisturbanceModel::BandLimitedNoise { seed: 3, cutoff: 10.0, components: 12 },
        ] {
            let d = Disturbance::new(model, 0.7, 2);
            for k in 0..2000 {
                assert!(d.eval(k as f64 * 0.01).norm() <= 0.7 + 1e-15);
            }
        }
    }

    #[test]
    fn binary_dump_roundtrip() {
        let tr = FieldTrace {
            grid: vec![0.0, 0.5, 1.0],
            fields: vec![vec![1.0, 2.0, 3.0], vec![-1.0, 0.25, 1e-300]],
            ..Default::default()
        };
        let mut buf = Vec::new();
        tr.write_binary(&mut buf).unwrap();
        let (cols, rows) = FieldTrace::read_binary(&buf).unwrap();
        assert_eq!(cols, 3);
        assert_eq!(rows, tr.fields);
    }

    #[test]
    fn robin_boundary_keeps_neumann_mass() {
        // Neumann ends, no reaction: the mean is conserved.
        let mut plant = heat_plant(Profile::new(vec![crate::profile::Term::Cos {
            coef: 1.0,
            freq: 1.0,
            phase: 0.0,
        }, crate::profile::Term::Const { coef: 0.5 }]));
        plant.spec.left = Boundary { h1: 0.0, h2: 1.0 };
        plant.spec.right = Boundary { h1: 0.0, h2: 1.0 };
        let st = PdeStepper::new(&plant, 256, 1e-3).unwrap();
        let (mut f, modified) = st.initial_field(&|p| plant.xi0.eval(p));
        assert!(!modified);
        let n = f.len() - 1;
        let w = simpson_weights(n, PI / n as f64);
        let mass = |f: &[f64]| -> f64 { f.iter().zip(&w).map(|(a, b)| a * b).sum() };
        let m0 = mass(&f);
        for _ in 0..1000 {
            st.step(&mut f, &[], &[]);
        }
        assert!((mass(&f) - m0).abs() < 1e-3 * m0.abs());
        // cosine component decayed by about e^-1
        assert!((f[0] - 0.5 - (-1.0f64).exp()).abs() < 5e-3);
    }
}
