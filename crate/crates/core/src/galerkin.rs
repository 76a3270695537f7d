//! Eigenbasis of the spatial operator, modal projection and the slow
//! (finite-dimensional) model obtained by Galerkin truncation.

use crate::profile::Profile;
use crate::quadrature::Quadrature;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GalerkinError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported boundary: analytic basis needs homogeneous Dirichlet ends")]
    UnsupportedBoundary,
    #[error("grid too coarse: grid_n = {grid_n} but at least {needed} points are needed for m = {m}")]
    Resolution { grid_n: usize, m: usize, needed: usize },
    #[error("degenerate spectrum: all eigenvalues are zero")]
    DegenerateSpectrum,
    #[error("singular measurement locations (condition number {0:.3e})")]
    SingularLocations(f64),
    #[error("tabulated profile grid does not match the quadrature nodes")]
    GridMismatch,
    #[error("basis is not slow/fast separable (lambda_(m+1) = {tail}, epsilon = {epsilon})")]
    NotSeparable { tail: f64, epsilon: f64 },
}

/// Boundary row h1 * xi + h2 * xi_p = 0 at one end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Boundary {
    pub h1: f64,
    pub h2: f64,
}

impl Boundary {
    pub const DIRICHLET: Boundary = Boundary { h1: 1.0, h2: 0.0 };

    pub fn is_dirichlet(&self) -> bool {
        self.h2 == 0.0 && self.h1 != 0.0
    }
}

/// Operator xi -> z1 xi_p + (z2 xi_p)_p on [a, b] with Robin ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SturmLiouvilleSpec {
    pub domain: (f64, f64),
    pub z1: Profile,
    pub z2: Profile,
    pub left: Boundary,
    pub right: Boundary,
}

impl SturmLiouvilleSpec {
    /// Constant diffusion, no advection, Dirichlet at both ends.
    pub fn dirichlet_heat(diffusion: f64, domain: (f64, f64)) -> Self {
        SturmLiouvilleSpec {
            domain,
            z1: Profile::zero(),
            z2: Profile::constant(diffusion),
            left: Boundary::DIRICHLET,
            right: Boundary::DIRICHLET,
        }
    }

    pub fn validate(&self) -> Result<(), GalerkinError> {
        let (a, b) = self.domain;
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(GalerkinError::InvalidArgument(format!(
                "domain [{a}, {b}] is not an interval"
            )));
        }
        for bc in [self.left, self.right] {
            if bc.h1 == 0.0 && bc.h2 == 0.0 {
                return Err(GalerkinError::InvalidArgument(
                    "boundary coefficients (h1, h2) are both zero".into(),
                ));
            }
        }
        for k in 0..=200 {
            let p = a + (b - a) * k as f64 / 200.0;
            if !(self.z2.eval(p) > 0.0) {
                return Err(GalerkinError::InvalidArgument(format!(
                    "z2({p}) must be positive"
                )));
            }
        }
        Ok(())
    }

    /// The constant diffusion when the operator is the plain Dirichlet Laplacian.
    pub fn analytic_diffusion(&self) -> Option<f64> {
        let z1 = self.z1.as_constant()?;
        let z2 = self.z2.as_constant()?;
        (z1 == 0.0 && self.left.is_dirichlet() && self.right.is_dirichlet()).then_some(z2)
    }
}

#[derive(Debug, Clone)]
enum Shapes {
    Sine { a: f64, len: f64 },
    Grid { nodes: Vec<f64>, vecs: DMatrix<f64>, mix: DMatrix<f64> },
}

/// Eigenvalues (descending) and orthonormal eigenfunctions of the operator.
#[derive(Debug, Clone)]
pub struct ModalBasis {
    pub domain: (f64, f64),
    pub m: usize,
    pub eigenvalues: Vec<f64>,
    pub quad: Quadrature,
    /// Sturm weight exp(int z1/z2) at the quadrature nodes; identically 1 without advection.
    pub weight: Vec<f64>,
    /// Eigenfunction values at the quadrature nodes, one column per mode.
    pub table: DMatrix<f64>,
    pub separable: bool,
    pub warnings: Vec<String>,
    shapes: Shapes,
}

impl ModalBasis {
    pub fn n_modes(&self) -> usize {
        self.table.ncols()
    }

    /// lambda_(m+1).
    pub fn tail_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.m]
    }

    /// phi_j(p), with j counted from 0.
    pub fn eval(&self, j: usize, p: f64) -> f64 {
        match &self.shapes {
            Shapes::Sine { a, len } => {
                (2.0 / len).sqrt() * ((j + 1) as f64 * std::f64::consts::PI * (p - a) / len).sin()
            }
            Shapes::Grid { nodes, vecs, mix } => {
                let (i, t) = locate(nodes, p);
                let mut v = 0.0;
                for k in 0..vecs.ncols() {
                    let s = (1.0 - t) * vecs[(i, k)] + t * vecs[(i + 1, k)];
                    v += s * mix[(k, j)];
                }
                v
            }
        }
    }

    /// Quadrature weights including the Sturm weight, used for all inner products.
    pub fn inner_weights(&self) -> Vec<f64> {
        self.quad.weights.iter().zip(&self.weight).map(|(q, w)| q * w).collect()
    }

    /// Gram matrix of the stored modes on the quadrature grid.
    pub fn gram(&self) -> DMatrix<f64> {
        let w = self.inner_weights();
        let n = self.n_modes();
        DMatrix::from_fn(n, n, |i, j| {
            (0..w.len()).map(|q| w[q] * self.table[(q, i)] * self.table[(q, j)]).sum()
        })
    }

    /// CSV with columns p, phi_1 ... phi_m on `points` uniform samples.
    pub fn to_csv(&self, points: usize) -> String {
        let mut s = String::from("p");
        for j in 0..self.m {
            let _ = write!(s, ",phi_{}", j + 1);
        }
        s.push('\n');
        let (a, b) = self.domain;
        let n = points.max(2);
        for k in 0..n {
            let p = a + (b - a) * k as f64 / (n - 1) as f64;
            let _ = write!(s, "{p:.17e}");
            for j in 0..self.m {
                let _ = write!(s, ",{:.17e}", self.eval(j, p));
            }
            s.push('\n');
        }
        s
    }

    /// CSV with columns j, lambda for every stored eigenvalue.
    pub fn eigenvalues_csv(&self) -> String {
        let mut s = String::from("j,lambda\n");
        for (j, l) in self.eigenvalues.iter().enumerate() {
            let _ = writeln!(s, "{},{:.17e}", j + 1, l);
        }
        s
    }
}

fn locate(nodes: &[f64], p: f64) -> (usize, f64) {
    let n = nodes.len();
    let a = nodes[0];
    if p >= nodes[n - 1] {
        return (n - 2, 1.0);
    }
    let h = (nodes[n - 1] - a) / (n - 1) as f64;
    let x = ((p - a) / h).clamp(0.0, (n - 1) as f64);
    let i = (x.floor() as usize).min(n - 2);
    let t = x - i as f64;
    // snap to nodes so values at grid points are reproduced exactly
    let t = if t < 1e-12 { 0.0 } else if t > 1.0 - 1e-12 { 1.0 } else { t };
    (i, t)
}

fn separability(eigs: &[f64], m: usize) -> (f64, bool) {
    let scale = eigs.iter().fold(0.0f64, |a, l| a.max(l.abs()));
    let lead = eigs
        .iter()
        .copied()
        .find(|l| l.abs() > 1e-9 * scale)
        .unwrap_or(0.0);
    let tail = eigs[m];
    let eps = if tail == 0.0 {
        f64::INFINITY
    } else {
        lead.abs() / tail.abs()
    };
    (eps, tail < 0.0 && eps < 1.0)
}

/// Sine eigenbasis of diffusion * xi_pp with Dirichlet ends.
///
/// `quadrature_n` is the number of 8-node Gauss-Legendre panels. Stores m+1
/// modes so the tail eigenvalue is available.
pub fn analytic_dirichlet_basis(
    diffusion: f64,
    domain: (f64, f64),
    m: usize,
    quadrature_n: usize,
) -> Result<ModalBasis, GalerkinError> {
    if m == 0 {
        return Err(GalerkinError::InvalidArgument("m must be at least 1".into()));
    }
    if !(diffusion > 0.0) || quadrature_n == 0 {
        return Err(GalerkinError::InvalidArgument(
            "diffusion and quadrature_n must be positive".into(),
        ));
    }
    let (a, b) = domain;
    if !(a < b) {
        return Err(GalerkinError::InvalidArgument("empty domain".into()));
    }
    let len = b - a;
    let n_modes = m + 1;
    let eigenvalues: Vec<f64> = (1..=n_modes)
        .map(|j| -diffusion * (j as f64 * std::f64::consts::PI / len).powi(2))
        .collect();
    let quad = Quadrature::composite(a, b, quadrature_n, 8);
    let shapes = Shapes::Sine { a, len };
    let mut basis = ModalBasis {
        domain,
        m,
        eigenvalues,
        weight: vec![1.0; quad.len()],
        table: DMatrix::zeros(quad.len(), n_modes),
        quad,
        separable: false,
        warnings: Vec::new(),
        shapes,
    };
    for j in 0..n_modes {
        for q in 0..basis.quad.len() {
            basis.table[(q, j)] = basis.eval(j, basis.quad.nodes[q]);
        }
    }
    basis.separable = separability(&basis.eigenvalues, m).1;
    Ok(basis)
}

/// Same as [`analytic_dirichlet_basis`] but with `modes` stored modes (at least m+1).
pub fn analytic_dirichlet_basis_with_modes(
    diffusion: f64,
    domain: (f64, f64),
    m: usize,
    modes: usize,
    quadrature_n: usize,
) -> Result<ModalBasis, GalerkinError> {
    let mut b = analytic_dirichlet_basis(diffusion, domain, modes.max(m + 1) - 1, quadrature_n)?;
    b.m = m;
    b.separable = separability(&b.eigenvalues, m).1;
    Ok(b)
}

/// Symmetric tridiagonal matrix given by its diagonal and off-diagonal.
struct Tridiag {
    d: Vec<f64>,
    e: Vec<f64>,
}

impl Tridiag {
    /// Number of eigenvalues strictly less than x (Sturm count).
    fn count_below(&self, x: f64) -> usize {
        let mut count = 0;
        let mut q = self.d[0] - x;
        if q < 0.0 {
            count += 1;
        }
        for i in 1..self.d.len() {
            let qq = if q == 0.0 { f64::EPSILON * (self.e[i - 1].abs() + 1.0) } else { q };
            q = self.d[i] - x - self.e[i - 1] * self.e[i - 1] / qq;
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    fn bounds(&self) -> (f64, f64) {
        let n = self.d.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let r = if i > 0 { self.e[i - 1].abs() } else { 0.0 }
                + if i + 1 < n { self.e[i].abs() } else { 0.0 };
            lo = lo.min(self.d[i] - r);
            hi = hi.max(self.d[i] + r);
        }
        (lo, hi)
    }

    /// The k-th largest eigenvalue (k = 0 is the largest), by bisection.
    fn kth_largest(&self, k: usize) -> f64 {
        let n = self.d.len();
        let target = n - k; // number of eigenvalues <= lambda
        let (mut lo, mut hi) = self.bounds();
        let span = (hi - lo).max(1e-300);
        lo -= 1e-12 * span;
        hi += 1e-12 * span;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.count_below(mid) >= target {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 4.0 * f64::EPSILON * mid.abs().max(1e-300) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Eigenvector for an accurate eigenvalue estimate by inverse iteration.
    fn eigenvector(&self, lambda: f64) -> Vec<f64> {
        let n = self.d.len();
        let scale = self.d.iter().map(|x| x.abs()).fold(1.0, f64::max);
        let shift = lambda + 1e-10 * scale;
        let mut x = vec![1.0; n];
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = 1.0 + 0.01 * ((i * 7919) % 101) as f64 / 101.0;
        }
        for _ in 0..4 {
            x = self.solve_shifted(shift, &x);
            let nrm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in x.iter_mut() {
                *v /= nrm;
            }
        }
        x
    }

    /// Solves (T - s I) y = r with partial pivoting (tridiagonal LU).
    fn solve_shifted(&self, s: f64, r: &[f64]) -> Vec<f64> {
        let n = self.d.len();
        // Band storage with one extra super-diagonal created by pivoting.
        let mut a0: Vec<f64> = self.d.iter().map(|d| d - s).collect(); // diagonal
        let mut a1: Vec<f64> = self.e.clone(); // super
        a1.push(0.0);
        let mut a2 = vec![0.0; n]; // second super
        let mut sub: Vec<f64> = self.e.clone();
        let mut b = r.to_vec();
        for i in 0..n.saturating_sub(1) {
            if sub[i].abs() > a0[i].abs() {
                // swap rows i and i+1
                let (r0, r1, r2) = (a0[i], a1[i], a2[i]);
                a0[i] = sub[i];
                a1[i] = a0[i + 1];
                a2[i] = a1[i + 1];
                sub[i] = r0;
                a0[i + 1] = r1;
                a1[i + 1] = r2;
                b.swap(i, i + 1);
            }
            let piv = if a0[i] == 0.0 { 1e-300 } else { a0[i] };
            let l = sub[i] / piv;
            a0[i + 1] -= l * a1[i];
            if i + 1 < n - 1 {
                a1[i + 1] -= l * a2[i];
            }
            b[i + 1] -= l * b[i];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut v = b[i];
            if i + 1 < n {
                v -= a1[i] * x[i + 1];
            }
            if i + 2 < n {
                v -= a2[i] * x[i + 2];
            }
            let piv = if a0[i] == 0.0 { 1e-300 } else { a0[i] };
            x[i] = v / piv;
        }
        x
    }
}

fn sign_changes(v: &[f64]) -> usize {
    let tol = 1e-10 * v.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let mut last = 0.0;
    let mut n = 0;
    for &x in v {
        if x.abs() <= tol {
            continue;
        }
        if last != 0.0 && x.signum() != last {
            n += 1;
        }
        last = x.signum();
    }
    n
}

/// Finite-difference eigenbasis for a general Sturm-Liouville operator.
///
/// `grid_n` is the number of grid intervals; m+1 modes are stored.
pub fn eigensolve_sturm_liouville(
    spec: &SturmLiouvilleSpec,
    grid_n: usize,
    m: usize,
) -> Result<ModalBasis, GalerkinError> {
    eigensolve_with_modes(spec, grid_n, m, m + 1, 64)
}

/// Finite-difference eigenbasis storing `modes` modes and using
/// `quadrature_n` Gauss-Legendre panels.
pub fn eigensolve_with_modes(
    spec: &SturmLiouvilleSpec,
    grid_n: usize,
    m: usize,
    modes: usize,
    quadrature_n: usize,
) -> Result<ModalBasis, GalerkinError> {
    spec.validate()?;
    if m == 0 {
        return Err(GalerkinError::InvalidArgument("m must be at least 1".into()));
    }
    let modes = modes.max(m + 1);
    if grid_n < 10 * modes.max(m) {
        return Err(GalerkinError::Resolution {
            grid_n,
            m,
            needed: 10 * modes,
        });
    }
    let (a, b) = spec.domain;
    let n = grid_n;
    let dx = (b - a) / n as f64;
    let nodes: Vec<f64> = (0..=n).map(|i| a + i as f64 * dx).collect();

    let weight_fn = sturm_weight(spec);
    let coef = |p: f64| weight_fn(p) * spec.z2.eval(p);

    let first = if spec.left.is_dirichlet() { 1 } else { 0 };
    let last = if spec.right.is_dirichlet() { n - 1 } else { n };
    let size = last - first + 1;
    let mut diag = vec![0.0; size];
    let mut off = vec![0.0; size.saturating_sub(1)];
    let mut mass = vec![0.0; size];
    for i in 0..n {
        let c = coef(nodes[i] + 0.5 * dx) / dx;
        let (l, r) = (i, i + 1);
        if l >= first && l <= last {
            diag[l - first] -= c;
        }
        if r >= first && r <= last {
            diag[r - first] -= c;
        }
        if l >= first && r <= last {
            off[l - first] += c;
        }
    }
    for i in first..=last {
        let half = if i == 0 || i == n { 0.5 } else { 1.0 };
        mass[i - first] = half * weight_fn(nodes[i]) * dx;
    }
    if first == 0 {
        diag[0] += coef(a) * spec.left.h1 / spec.left.h2;
    }
    if last == n {
        diag[size - 1] -= coef(b) * spec.right.h1 / spec.right.h2;
    }
    let sm: Vec<f64> = mass.iter().map(|v| v.sqrt()).collect();
    let tri = Tridiag {
        d: diag.iter().zip(&mass).map(|(d, m)| d / m).collect(),
        e: (0..off.len()).map(|i| off[i] / (sm[i] * sm[i + 1])).collect(),
    };

    let mut pairs: Vec<(f64, Vec<f64>)> = Vec::with_capacity(modes);
    for k in 0..modes {
        let lam = tri.kth_largest(k);
        let eta = tri.eigenvector(lam);
        let mut v = vec![0.0; n + 1];
        for i in first..=last {
            v[i] = eta[i - first] / sm[i - first];
        }
        let big = v.iter().map(|x| x.abs()).fold(0.0, f64::max);
        if let Some(s) = v.iter().find(|x| x.abs() > 1e-6 * big) {
            if *s < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        pairs.push((lam, v));
    }
    // Descending order; near-equal eigenvalues ordered by node count.
    pairs.sort_by(|x, y| {
        let tol = 1e-12 * x.0.abs().max(y.0.abs()).max(1e-300);
        if (x.0 - y.0).abs() <= tol {
            sign_changes(&x.1).cmp(&sign_changes(&y.1))
        } else {
            y.0.partial_cmp(&x.0).unwrap()
        }
    });

    let mut warnings = Vec::new();
    // Residual of the direct (unsymmetrized) discretization on the interior.
    for (k, (lam, v)) in pairs.iter().enumerate() {
        let mut res: f64 = 0.0;
        let mut nrm: f64 = 0.0;
        for i in 1..n {
            let p = nodes[i];
            let zr = spec.z2.eval(p + 0.5 * dx);
            let zl = spec.z2.eval(p - 0.5 * dx);
            let op = spec.z1.eval(p) * (v[i + 1] - v[i - 1]) / (2.0 * dx)
                + (zr * (v[i + 1] - v[i]) - zl * (v[i] - v[i - 1])) / (dx * dx);
            res = res.max((op - lam * v[i]).abs());
            nrm = nrm.max(v[i].abs());
        }
        let rel = res / (lam.abs().max(1.0) * nrm.max(1e-300));
        if rel > 1e-2 {
            warnings.push(format!(
                "mode {}: non-self-adjoint discretization residual {rel:.3e}",
                k + 1
            ));
        }
    }

    let quad = Quadrature::composite(a, b, quadrature_n, 8);
    let weight: Vec<f64> = quad.nodes.iter().map(|&p| weight_fn(p)).collect();
    let vecs = DMatrix::from_fn(n + 1, modes, |i, k| pairs[k].1[i]);
    let raw = DMatrix::from_fn(quad.len(), modes, |q, k| {
        let (i, t) = locate(&nodes, quad.nodes[q]);
        (1.0 - t) * vecs[(i, k)] + t * vecs[(i + 1, k)]
    });
    // Symmetric orthonormalization on the quadrature grid.
    let gram = DMatrix::from_fn(modes, modes, |i, j| {
        (0..quad.len())
            .map(|q| quad.weights[q] * weight[q] * raw[(q, i)] * raw[(q, j)])
            .sum::<f64>()
    });
    let eig = nalgebra::SymmetricEigen::new(gram);
    let inv_sqrt = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()))
        * eig.eigenvectors.transpose();
    let table = &raw * &inv_sqrt;
    let eigenvalues: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let separable = separability(&eigenvalues, m).1;
    Ok(ModalBasis {
        domain: spec.domain,
        m,
        eigenvalues,
        quad,
        weight,
        table,
        separable,
        warnings,
        shapes: Shapes::Grid { nodes, vecs, mix: inv_sqrt },
    })
}

/// Integrating factor w(p) = exp(int_a^p z1/z2) that makes the operator self-adjoint.
fn sturm_weight(spec: &SturmLiouvilleSpec) -> impl Fn(f64) -> f64 + '_ {
    let no_adv = spec.z1.as_constant() == Some(0.0);
    let a = spec.domain.0;
    move |p: f64| {
        if no_adv || p <= a {
            1.0
        } else {
            let q = Quadrature::composite(a, p, 8, 8);
            q.integrate(|s| spec.z1.eval(s) / spec.z2.eval(s)).exp()
        }
    }
}

/// Spectral gap ratio |lambda_L| / |lambda_(m+1)| and the separability flag.
pub fn spectral_gap(basis: &ModalBasis, m: usize) -> Result<(f64, bool), GalerkinError> {
    if m == 0 || basis.eigenvalues.len() < m + 1 {
        return Err(GalerkinError::InvalidArgument(format!(
            "basis holds {} eigenvalues, need m+1 = {}",
            basis.eigenvalues.len(),
            m + 1
        )));
    }
    if basis.eigenvalues.iter().all(|l| *l == 0.0) {
        return Err(GalerkinError::DegenerateSpectrum);
    }
    Ok(separability(&basis.eigenvalues, m))
}

/// Inner products <phi_j, g> for the requested modes (0-based).
pub fn project(g: &dyn Fn(f64) -> f64, basis: &ModalBasis, modes: &[usize]) -> DVector<f64> {
    let w = basis.inner_weights();
    let vals: Vec<f64> = basis.quad.nodes.iter().map(|&p| g(p)).collect();
    DVector::from_iterator(
        modes.len(),
        modes.iter().map(|&j| {
            (0..w.len()).map(|q| w[q] * vals[q] * basis.table[(q, j)]).sum::<f64>()
        }),
    )
}

/// Projection of a tabulated profile. Samples must sit on the quadrature
/// nodes unless `resample` is set, in which case they are linearly
/// interpolated from the (sorted) sample grid.
pub fn project_tabulated(
    nodes: &[f64],
    values: &[f64],
    basis: &ModalBasis,
    modes: &[usize],
    resample: bool,
) -> Result<DVector<f64>, GalerkinError> {
    if nodes.len() != values.len() || nodes.len() < 2 {
        return Err(GalerkinError::GridMismatch);
    }
    let same = nodes.len() == basis.quad.len()
        && nodes.iter().zip(&basis.quad.nodes).all(|(a, b)| (a - b).abs() < 1e-12);
    if same {
        let w = basis.inner_weights();
        return Ok(DVector::from_iterator(
            modes.len(),
            modes.iter().map(|&j| {
                (0..w.len()).map(|q| w[q] * values[q] * basis.table[(q, j)]).sum::<f64>()
            }),
        ));
    }
    if !resample {
        return Err(GalerkinError::GridMismatch);
    }
    let interp = |p: f64| -> f64 {
        let k = nodes.partition_point(|x| *x < p).clamp(1, nodes.len() - 1);
        let (x0, x1) = (nodes[k - 1], nodes[k]);
        let t = ((p - x0) / (x1 - x0)).clamp(0.0, 1.0);
        (1.0 - t) * values[k - 1] + t * values[k]
    };
    Ok(project(&interp, basis, modes))
}

/// Slow coordinates from point samples of a field.
pub fn reconstruct_slow_state(
    samples: &[f64],
    basis: &ModalBasis,
    locations: &[f64],
) -> Result<DVector<f64>, GalerkinError> {
    let m = basis.m;
    let k = locations.len();
    if k < m || samples.len() != k {
        return Err(GalerkinError::InvalidArgument(format!(
            "need at least m = {m} locations with one sample each"
        )));
    }
    let phi = DMatrix::from_fn(k, m, |i, j| basis.eval(j, locations[i]));
    let sv = phi.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond <= 1e12) {
        return Err(GalerkinError::SingularLocations(cond));
    }
    let y = DVector::from_column_slice(samples);
    if k == m {
        phi.lu()
            .solve(&y)
            .ok_or(GalerkinError::SingularLocations(cond))
    } else {
        let ata = phi.transpose() * &phi;
        let aty = phi.transpose() * y;
        ata.cholesky()
            .map(|c| c.solve(&aty))
            .ok_or(GalerkinError::SingularLocations(cond))
    }
}

/// Slow model matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlowSystem {
    pub a_s: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl SlowSystem {
    pub fn m(&self) -> usize {
        self.a_s.nrows()
    }
    pub fn n_u(&self) -> usize {
        self.b2.ncols()
    }
    pub fn n_d(&self) -> usize {
        self.b1.ncols()
    }
    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }
}

/// Projects input, disturbance and output profiles onto the slow modes.
pub fn assemble_slow_system(
    basis: &ModalBasis,
    b2: &[Profile],
    b1: &[Profile],
    c_bar: &[Profile],
) -> Result<SlowSystem, GalerkinError> {
    if !basis.separable {
        let (epsilon, _) = separability(&basis.eigenvalues, basis.m);
        return Err(GalerkinError::NotSeparable {
            tail: basis.tail_eigenvalue(),
            epsilon,
        });
    }
    let m = basis.m;
    let modes: Vec<usize> = (0..m).collect();
    let a_s = DMatrix::from_diagonal(&DVector::from_column_slice(&basis.eigenvalues[..m]));
    let cols = |ps: &[Profile]| -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m, ps.len());
        for (h, p) in ps.iter().enumerate() {
            out.set_column(h, &project(&|x| p.eval(x), basis, &modes));
        }
        out
    };
    let b2m = cols(b2);
    let b1m = cols(b1);
    // Output rows use the plain (unweighted) integral of c_bar * phi_j.
    let mut c = DMatrix::zeros(c_bar.len(), m);
    for (i, cb) in c_bar.iter().enumerate() {
        for j in 0..m {
            c[(i, j)] = (0..basis.quad.len())
                .map(|q| basis.quad.weights[q] * cb.eval(basis.quad.nodes[q]) * basis.table[(q, j)])
                .sum::<f64>();
        }
    }
    Ok(SlowSystem { a_s, b2: b2m, b1: b1m, c })
}

/// Slow part of a pointwise nonlinearity: <phi_i, f(sum_j xi_j phi_j)>, i < m.
pub fn modal_nonlinearity(
    basis: &ModalBasis,
    f: &dyn Fn(f64) -> f64,
    xi: &DVector<f64>,
) -> DVector<f64> {
    let m = xi.len();
    let w = basis.inner_weights();
    let mut out = DVector::zeros(m);
    for q in 0..w.len() {
        let mut field = 0.0;
        for j in 0..m {
            field += xi[j] * basis.table[(q, j)];
        }
        let fq = w[q] * f(field);
        for i in 0..m {
            out[i] += fq * basis.table[(q, i)];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn analytic_eigenvalues() {
        let b = analytic_dirichlet_basis(1.0, (0.0, PI), 2, 64).unwrap();
        assert_eq!(b.eigenvalues[0], -1.0);
        assert_eq!(b.eigenvalues[1], -4.0);
        assert_eq!(b.tail_eigenvalue(), -9.0);
        assert!(b.separable);
    }

    #[test]
    fn analytic_rejects_m_zero() {
        assert!(matches!(
            analytic_dirichlet_basis(1.0, (0.0, PI), 0, 64),
            Err(GalerkinError::InvalidArgument(_))
        ));
    }

    #[test]
    fn fd_matches_sine_spectrum() {
        let spec = SturmLiouvilleSpec::dirichlet_heat(1.0, (0.0, PI));
        let b = eigensolve_sturm_liouville(&spec, 400, 2).unwrap();
        // discrete Laplacian: -(4/dx^2) sin^2(j dx / 2)
        let dx = PI / 400.0;
        for j in 1..=3 {
            let exact = -(4.0 / (dx * dx)) * (j as f64 * dx / 2.0).sin().powi(2);
            assert!((b.eigenvalues[j - 1] - exact).abs() < 1e-9, "{j}");
        }
        assert_eq!(b.eval(0, 0.0), 0.0);
        assert_eq!(b.eval(1, PI), 0.0);
        let g = b.gram();
        for i in 0..3 {
            for j in 0..3 {
                let t = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - t).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn resolution_error() {
        let spec = SturmLiouvilleSpec::dirichlet_heat(1.0, (0.0, PI));
        assert!(matches!(
            eigensolve_sturm_liouville(&spec, 20, 2),
            Err(GalerkinError::Resolution { .. })
        ));
    }

    #[test]
    fn neumann_has_zero_mode() {
        let spec = SturmLiouvilleSpec {
            domain: (0.0, PI),
            z1: Profile::zero(),
            z2: Profile::constant(1.0),
            left: Boundary { h1: 0.0, h2: 1.0 },
            right: Boundary { h1: 0.0, h2: 1.0 },
        };
        let b = eigensolve_sturm_liouville(&spec, 400, 1).unwrap();
        assert!(b.eigenvalues[0].abs() < 1e-10);
        assert!((b.eigenvalues[1] + 1.0).abs() < 1e-4);
        let (eps, sep) = spectral_gap(&b, 1).unwrap();
        assert_eq!(eps, 1.0);
        assert!(!sep);
    }

    #[test]
    fn gap_values() {
        let b = analytic_dirichlet_basis_with_modes(1.0, (0.0, PI), 2, 6, 64).unwrap();
        let (e2, s2) = spectral_gap(&b, 2).unwrap();
        assert!((e2 - 1.0 / 9.0).abs() < 1e-15 && s2);
        let (e1, _) = spectral_gap(&b, 1).unwrap();
        assert!((e1 - 0.25).abs() < 1e-15);
    }

    #[test]
    fn reconstruct_exact_span() {
        let b = analytic_dirichlet_basis(1.0, (0.0, PI), 2, 64).unwrap();
        let locs = [PI / 3.0, 2.0 * PI / 3.0];
        let v = [0.3, -1.2];
        let s: Vec<f64> = locs.iter().map(|&p| v[0] * b.eval(0, p) + v[1] * b.eval(1, p)).collect();
        let r = reconstruct_slow_state(&s, &b, &locs).unwrap();
        assert!((r[0] - v[0]).abs() < 1e-12 && (r[1] - v[1]).abs() < 1e-12);
        // both locations at zeros of the second mode
        let bad = [0.0, PI / 2.0];
        assert!(matches!(
            reconstruct_slow_state(&[0.0, 0.0], &b, &bad),
            Err(GalerkinError::SingularLocations(_))
        ));
    }

    #[test]
    fn tabulated_projection_needs_matching_grid() {
        let b = analytic_dirichlet_basis(1.0, (0.0, PI), 2, 64).unwrap();
        let nodes: Vec<f64> = (0..101).map(|i| PI * i as f64 / 100.0).collect();
        let vals: Vec<f64> = nodes.iter().map(|p| p.sin()).collect();
        assert_eq!(
            project_tabulated(&nodes, &vals, &b, &[0], false),
            Err(GalerkinError::GridMismatch)
        );
        let v = project_tabulated(&nodes, &vals, &b, &[0], true).unwrap();
        assert!((v[0] - (PI / 2.0).sqrt()).abs() < 1e-3);
        let exact: Vec<f64> = b.quad.nodes.iter().map(|p| p.sin()).collect();
        let w = project_tabulated(&b.quad.nodes.clone(), &exact, &b, &[0], false).unwrap();
        assert!((w[0] - (PI / 2.0).sqrt()).abs() < 1e-12);
    }
}
