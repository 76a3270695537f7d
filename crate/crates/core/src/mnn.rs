//! Three-layer network f_nn(xi) = W mu(V xi) for the slow nonlinearity:
//! evaluation, training targets, Levenberg-Marquardt and gradient-descent
//! training, and the bounds the synthesis needs.

use crate::galerkin::{reconstruct_slow_state, ModalBasis};
use crate::io::{matrix_from_csv, matrix_to_csv};
use crate::pde_sim::{PdeStepper, PlantModel};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum MnnError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("training stalled after {iterations} iterations (damping {damping:.3e})")]
    Stalled { iterations: usize, damping: f64, best: Box<TrainResult> },
    #[error("gradient descent diverged at iteration {iteration}")]
    Diverged { iteration: usize, history: Vec<f64> },
}

/// Bipolar sigmoid q (2 / (1 + exp(-s/r)) - 1), evaluated as q tanh(s / 2r).
pub fn activation(s: f64, q: f64, r: f64) -> f64 {
    q * (0.5 * s / r).tanh()
}

/// d mu / d s.
pub fn activation_slope(s: f64, q: f64, r: f64) -> f64 {
    let t = (0.5 * s / r).tanh();
    q / (2.0 * r) * (1.0 - t * t)
}

/// Closed form of int_0^s mu: 2 q r ln cosh(s / 2r).
pub fn activation_integral(s: f64, q: f64, r: f64) -> f64 {
    let x = (0.5 * s / r).abs();
    // ln cosh x = x + ln(1 + e^{-2x}) - ln 2, stable for large x
    2.0 * q * r * (x + (-2.0 * x).exp().ln_1p() - std::f64::consts::LN_2)
}

/// The network: W (m x n_h), V (n_h x m) and per-neuron q, r.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mnn {
    pub w: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
}

impl Mnn {
    pub fn new(w: DMatrix<f64>, v: DMatrix<f64>, q: Vec<f64>, r: Vec<f64>) -> Result<Self, MnnError> {
        let nh = v.nrows();
        if w.ncols() != nh || v.ncols() != w.nrows() || q.len() != nh || r.len() != nh {
            return Err(MnnError::InvalidArgument(format!(
                "inconsistent shapes W {}x{}, V {}x{}, q {}, r {}",
                w.nrows(),
                w.ncols(),
                v.nrows(),
                v.ncols(),
                q.len(),
                r.len()
            )));
        }
        if q.iter().chain(&r).any(|x| !(*x > 0.0)) {
            return Err(MnnError::InvalidArgument("q and r must be positive".into()));
        }
        Ok(Mnn { w, v, q, r })
    }

    /// Weights drawn uniformly from [-1, 1].
    pub fn random(m: usize, n_h: usize, q: f64, r: f64, seed: u64) -> Self {
        let mut net = Mnn {
            w: DMatrix::zeros(m, n_h),
            v: DMatrix::zeros(n_h, m),
            q: vec![q; n_h],
            r: vec![r; n_h],
        };
        net.reinit(seed);
        net
    }

    pub fn reinit(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for x in self.w.iter_mut() {
            *x = rng.gen_range(-1.0..=1.0);
        }
        for x in self.v.iter_mut() {
            *x = rng.gen_range(-1.0..=1.0);
        }
    }

    pub fn m(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_h(&self) -> usize {
        self.v.nrows()
    }

    pub fn n_params(&self) -> usize {
        2 * self.m() * self.n_h()
    }

    pub fn hidden(&self, xi: &DVector<f64>) -> DVector<f64> {
        let s = &self.v * xi;
        DVector::from_fn(s.len(), |i, _| activation(s[i], self.q[i], self.r[i]))
    }

    pub fn forward(&self, xi: &DVector<f64>) -> DVector<f64> {
        &self.w * self.hidden(xi)
    }

    /// Parameters as one vector: W row-major, then V row-major.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for i in 0..self.w.nrows() {
            for j in 0..self.w.ncols() {
                p.push(self.w[(i, j)]);
            }
        }
        for i in 0..self.v.nrows() {
            for j in 0..self.v.ncols() {
                p.push(self.v[(i, j)]);
            }
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let (m, nh) = (self.m(), self.n_h());
        for i in 0..m {
            for j in 0..nh {
                self.w[(i, j)] = p[i * nh + j];
            }
        }
        let off = m * nh;
        for i in 0..nh {
            for j in 0..m {
                self.v[(i, j)] = p[off + i * m + j];
            }
        }
    }

    /// Jacobian of forward(xi) with respect to params(), m x n_params.
    pub fn jacobian(&self, xi: &DVector<f64>) -> DMatrix<f64> {
        let (m, nh) = (self.m(), self.n_h());
        let s = &self.v * xi;
        let mut j = DMatrix::zeros(m, self.n_params());
        for k in 0..nh {
            let mu = activation(s[k], self.q[k], self.r[k]);
            let dmu = activation_slope(s[k], self.q[k], self.r[k]);
            for i in 0..m {
                j[(i, i * nh + k)] = mu;
                for l in 0..m {
                    j[(i, m * nh + k * m + l)] = self.w[(i, k)] * dmu * xi[l];
                }
            }
        }
        j
    }

    /// CSV text for W, V and the (q, r) columns.
    pub fn to_csv(&self) -> (String, String, String) {
        let qr = DMatrix::from_fn(self.n_h(), 2, |i, j| if j == 0 { self.q[i] } else { self.r[i] });
        (matrix_to_csv(&self.w), matrix_to_csv(&self.v), matrix_to_csv(&qr))
    }

    pub fn from_csv(w: &str, v: &str, qr: &str) -> Result<Self, MnnError> {
        let w = matrix_from_csv(w).map_err(MnnError::InvalidArgument)?;
        let v = matrix_from_csv(v).map_err(MnnError::InvalidArgument)?;
        let qr = matrix_from_csv(qr).map_err(MnnError::InvalidArgument)?;
        if qr.ncols() != 2 {
            return Err(MnnError::InvalidArgument("q/r table needs two columns".into()));
        }
        Mnn::new(w, v, qr.column(0).iter().copied().collect(), qr.column(1).iter().copied().collect())
    }

    /// Stacks independently trained single-output networks into one network
    /// with block structure, so that output i only uses network i's neurons.
    pub fn stack(parts: &[Mnn]) -> Result<Mnn, MnnError> {
        let m = parts.len();
        if m == 0 || parts.iter().any(|p| p.m() != 1 || p.v.ncols() != m) {
            return Err(MnnError::InvalidArgument("stack needs m single-output networks".into()));
        }
        let nh: usize = parts.iter().map(|p| p.n_h()).sum();
        let mut w = DMatrix::zeros(m, nh);
        let mut v = DMatrix::zeros(nh, m);
        let mut q = Vec::new();
        let mut r = Vec::new();
        let mut off = 0;
        for (i, p) in parts.iter().enumerate() {
            for k in 0..p.n_h() {
                w[(i, off + k)] = p.w[(0, k)];
                v.set_row(off + k, &p.v.row(k));
            }
            q.extend_from_slice(&p.q);
            r.extend_from_slice(&p.r);
            off += p.n_h();
        }
        Mnn::new(w, v, q, r)
    }
}

/// Box region -rho1 <= xi_j <= rho2 for the identification samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Region {
    pub fn cube(m: usize, lo: f64, hi: f64) -> Self {
        Region { lower: vec![lo; m], upper: vec![hi; m] }
    }

    pub fn contains(&self, xi: &DVector<f64>) -> bool {
        xi.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(x, (l, u))| *x >= l - 1e-12 && *x <= u + 1e-12)
    }

    /// Tensor grid with the given spacing (end points included).
    pub fn grid(&self, spacing: f64) -> Vec<DVector<f64>> {
        let axes: Vec<Vec<f64>> = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| {
                let n = ((u - l) / spacing).round().max(0.0) as usize;
                (0..=n).map(move |k| if n == 0 { l } else { l + (u - l) * k as f64 / n as f64 }).collect()
            })
            .collect();
        let mut out = vec![Vec::new()];
        for ax in &axes {
            let mut next = Vec::with_capacity(out.len() * ax.len());
            for p in &out {
                for &x in ax {
                    let mut q = p.clone();
                    q.push(x);
                    next.push(q);
                }
            }
            out = next;
        }
        out.into_iter().map(DVector::from_vec).collect()
    }

    /// The grid plus copies of each point shrunk towards the origin by
    /// 2^-k, k = 1..=levels, with duplicates removed.
    pub fn grid_with_rays(&self, spacing: f64, levels: u32) -> Vec<DVector<f64>> {
        let mut out: Vec<DVector<f64>> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for x in self.grid(spacing) {
            for k in 0..=levels {
                let y = &x * 0.5f64.powi(k as i32);
                let key: Vec<u64> = y.iter().map(|v| (v + 0.0).to_bits()).collect();
                if seen.insert(key) {
                    out.push(y);
                }
            }
        }
        out
    }
}

/// Identification data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub inputs: Vec<DVector<f64>>,
    pub targets: Vec<DVector<f64>>,
    pub dt_s: f64,
    pub warnings: Vec<String>,
}

/// Advances the open-loop (u = 0, d = 0) slow state over one sampling interval
/// and reports the measured start and end slow states.
pub trait SlowSampler {
    fn sample(&self, xi: &DVector<f64>, dt_s: f64) -> Result<(DVector<f64>, DVector<f64>), String>;
}

/// Samples the full plant: the start field is sum_j xi_j phi_j, the PDE is
/// stepped over dt_s, and both ends are measured at sensor nodes and
/// reconstructed by least squares.
pub struct PdeSampler<'a> {
    pub plant: &'a PlantModel,
    pub basis: &'a ModalBasis,
    pub grid_n: usize,
    pub substeps: usize,
    pub sensors: usize,
}

impl SlowSampler for PdeSampler<'_> {
    fn sample(&self, xi: &DVector<f64>, dt_s: f64) -> Result<(DVector<f64>, DVector<f64>), String> {
        let st = PdeStepper::new(self.plant, self.grid_n, dt_s / self.substeps as f64)
            .map_err(|e| e.to_string())?;
        let n = st.grid.len() - 1;
        let k = self.sensors.max(self.basis.m);
        let idx: Vec<usize> = (1..=k).map(|j| (j * n + (k + 1) / 2) / (k + 1)).collect();
        let locs: Vec<f64> = idx.iter().map(|&i| st.grid[i]).collect();
        let (mut f, _) = st.initial_field(&|p| {
            (0..xi.len()).map(|j| xi[j] * self.basis.eval(j, p)).sum::<f64>()
        });
        let measure = |f: &[f64]| -> Result<DVector<f64>, String> {
            let s: Vec<f64> = idx.iter().map(|&i| f[i]).collect();
            reconstruct_slow_state(&s, self.basis, &locs).map_err(|e| e.to_string())
        };
        let start = measure(&f)?;
        let nu = self.plant.b2.len();
        let nd = self.plant.b1.len();
        for _ in 0..self.substeps {
            st.step(&mut f, &vec![0.0; nu], &vec![0.0; nd]);
        }
        if f.iter().any(|v| !v.is_finite() || v.abs() > 1e6) {
            return Err("sampler diverged".into());
        }
        Ok((start, measure(&f)?))
    }
}

/// Samples a modal ODE xi' = A_s xi + f_s(xi) with RK4 substeps.
pub struct ModalSampler<'a> {
    pub a_s: DMatrix<f64>,
    pub f_s: &'a dyn Fn(&DVector<f64>) -> DVector<f64>,
    pub substeps: usize,
}

impl SlowSampler for ModalSampler<'_> {
    fn sample(&self, xi: &DVector<f64>, dt_s: f64) -> Result<(DVector<f64>, DVector<f64>), String> {
        let rhs = |x: &DVector<f64>| &self.a_s * x + (self.f_s)(x);
        let h = dt_s / self.substeps.max(1) as f64;
        let mut x = xi.clone();
        for _ in 0..self.substeps.max(1) {
            let k1 = rhs(&x);
            let k2 = rhs(&(&x + &k1 * (0.5 * h)));
            let k3 = rhs(&(&x + &k2 * (0.5 * h)));
            let k4 = rhs(&(&x + &k3 * h));
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err("sampler diverged".into());
        }
        Ok((xi.clone(), x))
    }
}

/// Finite-difference targets (xi(t+dt_s) - xi(t))/dt_s - A_s xi(t) over a
/// region grid. Diverging samples are dropped with a warning.
pub fn generate_targets(
    sampler: &dyn SlowSampler,
    region: &Region,
    spacing: f64,
    dt_s: f64,
    a_s: &DMatrix<f64>,
) -> Result<TrainingSet, MnnError> {
    if !(spacing > 0.0) {
        return Err(MnnError::InvalidArgument("spacing must be positive".into()));
    }
    generate_targets_at(sampler, &region.grid(spacing), dt_s, a_s)
}

/// As [`generate_targets`] on an explicit list of start states.
pub fn generate_targets_at(
    sampler: &dyn SlowSampler,
    starts: &[DVector<f64>],
    dt_s: f64,
    a_s: &DMatrix<f64>,
) -> Result<TrainingSet, MnnError> {
    if !(dt_s > 0.0) {
        return Err(MnnError::InvalidArgument("dt_s must be positive".into()));
    }
    let mut set = TrainingSet { inputs: Vec::new(), targets: Vec::new(), dt_s, warnings: Vec::new() };
    for xi in starts {
        match sampler.sample(xi, dt_s) {
            Ok((x0, x1)) => {
                let t = (&x1 - &x0) / dt_s - a_s * &x0;
                set.inputs.push(x0);
                set.targets.push(t);
            }
            Err(e) => set.warnings.push(format!("sample at {:?} discarded: {e}", xi.as_slice())),
        }
    }
    if set.inputs.is_empty() {
        return Err(MnnError::InvalidArgument("no usable samples".into()));
    }
    Ok(set)
}

/// Levenberg-Marquardt settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmConfig {
    /// Initial damping.
    pub mu0: f64,
    /// Stop when the accepted loss changes by less than this.
    pub eps_c: f64,
    /// Iteration cap.
    pub k_max: usize,
    pub damping_up: f64,
    pub damping_down: f64,
    /// Scale the damping by 1 + diag(J^T J) instead of the identity.
    #[serde(default = "yes")]
    pub diag_scaling: bool,
    /// Stop early once the MSE drops below this (0 disables).
    #[serde(default)]
    pub goal_mse: f64,
    /// Ridge penalty: the objective becomes E + weight_decay/2 * |params|^2.
    #[serde(default)]
    pub weight_decay: f64,
}

fn yes() -> bool {
    true
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            mu0: 1e-3,
            eps_c: 1e-14,
            k_max: 3000,
            damping_up: 10.0,
            damping_down: 0.1,
            diag_scaling: true,
            goal_mse: 0.0,
            weight_decay: 0.0,
        }
    }
}

/// Outcome of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub net: Mnn,
    /// Loss E = (1/2N) sum ||f_nn - target||^2 after each iteration.
    pub history: Vec<f64>,
    pub converged: bool,
}

impl TrainResult {
    pub fn final_loss(&self) -> f64 {
        *self.history.last().unwrap_or(&f64::NAN)
    }
}

fn check_data(net: &Mnn, data: &TrainingSet) -> Result<(), MnnError> {
    if data.inputs.is_empty() || data.inputs.len() != data.targets.len() {
        return Err(MnnError::InvalidArgument("empty or ragged training set".into()));
    }
    let m = net.m();
    if data.inputs.iter().chain(&data.targets).any(|x| x.len() != m) {
        return Err(MnnError::InvalidArgument("sample dimension differs from the network".into()));
    }
    Ok(())
}

/// E = (1/2N) sum ||f_nn(x) - t||^2.
pub fn loss(net: &Mnn, data: &TrainingSet) -> f64 {
    let n = data.inputs.len() as f64;
    data.inputs
        .iter()
        .zip(&data.targets)
        .map(|(x, t)| (net.forward(x) - t).norm_squared())
        .sum::<f64>()
        / (2.0 * n)
}

/// Mean squared error per output entry, 2E/m.
pub fn mse(net: &Mnn, data: &TrainingSet) -> f64 {
    2.0 * loss(net, data) / net.m() as f64
}

/// Residuals e = target - f_nn stacked, and their network Jacobian.
fn residuals_and_jacobian(net: &Mnn, data: &TrainingSet) -> (DVector<f64>, DMatrix<f64>) {
    let m = net.m();
    let n = data.inputs.len();
    let mut e = DVector::zeros(n * m);
    let mut j = DMatrix::zeros(n * m, net.n_params());
    for (k, (x, t)) in data.inputs.iter().zip(&data.targets).enumerate() {
        let y = net.forward(x);
        let jk = net.jacobian(x);
        for i in 0..m {
            e[k * m + i] = t[i] - y[i];
        }
        j.view_mut((k * m, 0), (m, net.n_params())).copy_from(&jk);
    }
    (e, j)
}

/// Levenberg-Marquardt training. When `seed` is given the weights are first
/// re-drawn uniformly from [-1, 1].
pub fn train_lm(
    net: &Mnn,
    data: &TrainingSet,
    cfg: &LmConfig,
    seed: Option<u64>,
) -> Result<TrainResult, MnnError> {
    check_data(net, data)?;
    if !(cfg.mu0 > 0.0
        && cfg.eps_c >= 0.0
        && cfg.damping_up > 1.0
        && cfg.damping_down < 1.0
        && cfg.damping_down > 0.0
        && cfg.weight_decay >= 0.0)
    {
        return Err(MnnError::InvalidArgument("invalid LM configuration".into()));
    }
    let mut net = net.clone();
    if let Some(s) = seed {
        net.reinit(s);
    }
    let mut damping = cfg.mu0;
    let objective = |n: &Mnn| loss(n, data) + 0.5 * cfg.weight_decay * n.params().iter().map(|p| p * p).sum::<f64>();
    let mut e_cur = objective(&net);
    let mut history = Vec::new();
    let np = net.n_params();
    let n_data = data.inputs.len() as f64;
    for k in 0..cfg.k_max {
        let (e, j) = residuals_and_jacobian(&net, data);
        let base = net.params();
        let mut jtj = j.transpose() * &j;
        let mut jte = j.transpose() * e;
        // ridge rows, in the same 1/N scaling as the data term
        for i in 0..np {
            jtj[(i, i)] += n_data * cfg.weight_decay;
            jte[i] -= n_data * cfg.weight_decay * base[i];
        }
        loop {
            let mut a = jtj.clone();
            for i in 0..np {
                a[(i, i)] += if cfg.diag_scaling { damping * (1.0 + jtj[(i, i)]) } else { damping };
            }
            let step = a.cholesky().map(|c| c.solve(&jte));
            let accepted = step.and_then(|h| {
                let mut trial = net.clone();
                let p: Vec<f64> = base.iter().zip(h.iter()).map(|(p, d)| p + d).collect();
                trial.set_params(&p);
                let l = objective(&trial);
                (l.is_finite() && l < e_cur).then_some((trial, l))
            });
            match accepted {
                Some((trial, l)) => {
                    net = trial;
                    let de = (e_cur - l).abs();
                    e_cur = l;
                    history.push(l);
                    damping = (damping * cfg.damping_down).max(1e-15);
                    if de < cfg.eps_c || mse(&net, data) < cfg.goal_mse {
                        return Ok(TrainResult { net, history, converged: true });
                    }
                    break;
                }
                None => {
                    damping *= cfg.damping_up;
                    if damping > 1e16 {
                        let best = TrainResult { net: net.clone(), history: history.clone(), converged: false };
                        // a local minimum to machine precision counts as convergence
                        if e_cur < 1e-20 || jte.norm() < 1e-12 * (1.0 + e_cur) {
                            return Ok(TrainResult { converged: true, ..best });
                        }
                        return Err(MnnError::Stalled { iterations: k, damping, best: Box::new(best) });
                    }
                }
            }
        }
    }
    Ok(TrainResult { net, history, converged: false })
}

/// Gradient of E with respect to params().
pub fn loss_gradient(net: &Mnn, data: &TrainingSet) -> DVector<f64> {
    let (e, j) = residuals_and_jacobian(net, data);
    -(j.transpose() * e) / data.inputs.len() as f64
}

/// Fixed-rate gradient descent on the same loss.
pub fn train_bp_baseline(
    net: &Mnn,
    data: &TrainingSet,
    rate: f64,
    iters: usize,
    seed: Option<u64>,
) -> Result<TrainResult, MnnError> {
    check_data(net, data)?;
    let mut net = net.clone();
    if let Some(s) = seed {
        net.reinit(s);
    }
    let mut history = Vec::with_capacity(iters);
    for it in 0..iters {
        let g = loss_gradient(&net, data);
        let p: Vec<f64> = net.params().iter().zip(g.iter()).map(|(p, g)| p - rate * g).collect();
        net.set_params(&p);
        let l = loss(&net, data);
        if !l.is_finite() || l > 1e12 {
            return Err(MnnError::Diverged { iteration: it, history });
        }
        history.push(l);
    }
    Ok(TrainResult { net, history, converged: false })
}

/// sup ||f_s(xi) - f_nn(xi)|| / ||xi|| over a region grid and its radial
/// shrinks (factors 2^-k, k <= 8), times 1.1.
pub fn estimate_delta(
    net: &Mnn,
    true_f: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    region: &Region,
    spacing: f64,
) -> Result<f64, MnnError> {
    // each grid point plus its shrinks towards the origin, where the ratio
    // approaches the linearization mismatch
    let pts: Vec<DVector<f64>> =
        region.grid_with_rays(spacing, 8).into_iter().filter(|x| x.norm() > 1e-6).collect();
    if pts.is_empty() {
        return Err(MnnError::InvalidArgument("empty estimation grid".into()));
    }
    let worst = pts
        .iter()
        .map(|x| (true_f(x) - net.forward(x)).norm() / x.norm())
        .fold(0.0, f64::max);
    Ok(1.1 * worst)
}

/// Per-neuron slope bounds of the activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorBounds {
    pub g_min: Vec<f64>,
    pub g_max: Vec<f64>,
}

impl SectorBounds {
    pub fn g_min_mat(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.g_min))
    }
    pub fn g_max_mat(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.g_max))
    }
    /// G = G_max - G_min.
    pub fn g_mat(&self) -> DMatrix<f64> {
        self.g_max_mat() - self.g_min_mat()
    }
}

/// g_min = 0, g_max = q / 2r for the bipolar sigmoid.
pub fn sector_bounds(net: &Mnn) -> SectorBounds {
    SectorBounds {
        g_min: vec![0.0; net.n_h()],
        g_max: net.q.iter().zip(&net.r).map(|(q, r)| q / (2.0 * r)).collect(),
    }
}

/// Which bundled, previously trained network to load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Published {
    /// Two modes, 15 neurons, fitted to the quadratic reaction term.
    Example1,
    /// Two modes, 15 neurons, fitted to the cubic-plus-quadratic term.
    Example2,
}

/// Published weights with unit activation shapes. The tables list V
/// transposed, one row per mode.
pub fn published_network(which: Published) -> Mnn {
    let (w, vt): ([f64; 30], [f64; 30]) = match which {
        Published::Example1 => (
            [
                0.905, -0.019, -0.126, -0.039, 0.502, 0.094, 0.601, -0.923, 0.715, 0.079, -0.371, -0.354, -0.796, -0.031, 0.406, //
                0.025, -0.361, 0.680, -0.850, 0.327, -0.015, 0.056, -0.041, 0.545, 0.710, 0.011, -0.649, 0.282, -0.996, 0.053,
            ],
            [
                0.998, -0.275, -0.325, 0.409, -0.959, 0.984, 0.417, 0.449, -0.274, 0.920, 0.058, 0.211, 0.271, 0.507, 0.832, //
                -0.058, 0.085, 0.543, -0.974, -0.413, -0.779, 0.146, -0.855, -0.442, -0.055, 0.206, 0.869, -0.568, -0.571, 0.547,
            ],
        ),
        Published::Example2 => (
            [
                -0.362, -0.200, 0.755, 0.906, -0.991, 0.2030, 0.571, 0.277, -0.766, 0.421, -0.805, 0.170, 0.695, -0.539, -0.608, //
                -0.346, 0.397, -0.369, 0.795, 0.221, -0.589, 0.895, 0.151, -0.717, -0.346, -0.295, 0.143, 0.388, -0.083, -0.409,
            ],
            [
                0.314, -0.713, -0.483, 0.583, 0.455, 0.646, 0.873, -0.618, 0.054, -0.439, -0.183, -0.520, -0.285, -0.671, -0.995, //
                0.459, -0.335, -0.087, -0.049, -0.046, -0.245, 0.999, 0.299, -0.880, -0.639, -0.235, 0.012, 0.792, -0.431, 0.158,
            ],
        ),
    };
    let w = DMatrix::from_row_slice(2, 15, &w);
    let v = DMatrix::from_row_slice(2, 15, &vt).transpose();
    Mnn::new(w, v, vec![1.0; 15], vec![1.0; 15]).expect("bundled shapes are consistent")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_values() {
        assert_eq!(activation(0.0, 1.0, 1.0), 0.0);
        let direct = 2.0 / (1.0 + (-1.0f64).exp()) - 1.0;
        assert!((activation(1.0, 1.0, 1.0) - direct).abs() < 1e-15);
        assert!((activation(1e3, 2.0, 1.0) - 2.0).abs() < 1e-12);
        assert!((activation_slope(0.0, 3.0, 2.0) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn one_neuron_forward() {
        let net = Mnn::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0), vec![1.0], vec![1.0]).unwrap();
        let y = net.forward(&DVector::from_element(1, 1.0));
        assert!((y[0] - 0.462_117_157_260_009_8).abs() < 1e-12);
    }

    #[test]
    fn sector_values() {
        let net = Mnn::random(2, 3, 2.0, 1.0, 0);
        assert_eq!(sector_bounds(&net).g_max, vec![1.0; 3]);
        let net = Mnn::random(2, 3, 1.0, 1.0, 0);
        assert_eq!(sector_bounds(&net).g_max, vec![0.5; 3]);
    }

    #[test]
    fn params_roundtrip() {
        let net = Mnn::random(2, 4, 1.0, 1.0, 9);
        let mut other = Mnn::random(2, 4, 1.0, 1.0, 10);
        other.set_params(&net.params());
        assert_eq!(net, other);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Mnn::new(DMatrix::zeros(2, 3), DMatrix::zeros(3, 2), vec![1.0; 2], vec![1.0; 3]).is_err());
        assert!(Mnn::new(DMatrix::zeros(2, 3), DMatrix::zeros(3, 2), vec![1.0; 3], vec![0.0; 3]).is_err());
    }

    #[test]
    fn stacked_network_matches_parts() {
        let a = Mnn::random(1, 3, 1.0, 1.0, 1);
        let mut a = a;
        a.v = DMatrix::from_fn(3, 2, |i, j| (i + j) as f64 * 0.3 - 0.4);
        let mut b = Mnn::random(1, 2, 1.0, 1.0, 2);
        b.v = DMatrix::from_fn(2, 2, |i, j| (i as f64) - 0.7 * j as f64);
        let s = Mnn::stack(&[a.clone(), b.clone()]).unwrap();
        let x = DVector::from_vec(vec![0.3, -0.8]);
        let y = s.forward(&x);
        assert!((y[0] - a.forward(&x)[0]).abs() < 1e-15);
        assert!((y[1] - b.forward(&x)[0]).abs() < 1e-15);
    }

    #[test]
    fn region_grid_counts() {
        let r = Region::cube(2, 0.0, 1.0);
        assert_eq!(r.grid(0.25).len(), 25);
        assert!(r.grid(0.25).iter().all(|x| r.contains(x)));
    }
}
