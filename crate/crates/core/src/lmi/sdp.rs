//! Small dense log-det barrier interior-point solver for strict LMIs.
//!
//! Every constraint is G_j(x) > margin I or G_j(x) < -margin I. Phase 1
//! maximizes a common slack s (F_j(x) - s I > 0, s <= s_cap, |x| <= R) until
//! s > 0; phase 2, when an objective is given, follows the central path of
//! min c^T x over the strict feasible set.

use super::affine::SparseLmi;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    /// G(x) > margin I
    PosDef,
    /// G(x) < -margin I
    NegDef,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub name: String,
    pub lmi: SparseLmi,
    pub sense: Sense,
}

#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub n: usize,
    pub constraints: Vec<Constraint>,
    /// Minimize c^T x when present.
    pub objective: Option<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSettings {
    /// Required strictness of every constraint.
    pub margin: f64,
    /// Ball |x| <= radius bounding the search.
    pub radius: f64,
    /// Duality-gap proxy (barrier dimension / t) stopping tolerance.
    pub gap_tol: f64,
    /// Relative gap at which the objective phase stops.
    pub objective_tol: f64,
    /// Cap on the phase-1 slack.
    pub s_cap: f64,
    pub max_newton: usize,
    /// Newton steps allowed per centering.
    pub max_center: usize,
    /// Barrier parameter multiplier per outer iteration.
    pub t_growth: f64,
}

impl Default for SdpSettings {
    fn default() -> Self {
        SdpSettings { margin: 1.5e-6, radius: 1e6, gap_tol: 1e-7, objective_tol: 1e-7, s_cap: 1.0, max_newton: 20000, max_center: 500, t_growth: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub x: DVector<f64>,
    /// Per constraint: lambda_min(G) for PosDef, -lambda_max(G) for NegDef.
    pub slacks: Vec<f64>,
    pub objective: Option<f64>,
    pub newton_steps: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SdpError {
    #[error("infeasible: best common slack {best_slack:.3e} (binding constraint {binding})")]
    Infeasible { best_slack: f64, binding: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invalid problem: {0}")]
    Invalid(String),
}

/// Strictness of one constraint at a point, from a direct eigenvalue check.
pub fn constraint_slack(c: &Constraint, x: &DVector<f64>) -> f64 {
    let g = c.lmi.eval(x);
    let g = (&g + g.transpose()) * 0.5;
    let ev = g.symmetric_eigenvalues();
    match c.sense {
        Sense::PosDef => ev.min(),
        Sense::NegDef => -ev.max(),
    }
}

struct Barrier {
    /// F_j(x) > 0 after sign and margin.
    fs: Vec<SparseLmi>,
    n: usize,
    /// Number of leading variables inside the ball.
    n_ball: usize,
    radius2: f64,
    c: DVector<f64>,
    max_center: usize,
}

struct Eval {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

impl Barrier {
    fn dim(&self) -> f64 {
        self.fs.iter().map(|f| f.dim as f64).sum::<f64>() + 1.0
    }

    fn ball_gap(&self, x: &DVector<f64>) -> f64 {
        self.radius2 - x.rows(0, self.n_ball).norm_squared()
    }

    /// Barrier value without the objective, None outside the domain.
    fn log_barrier(&self, x: &DVector<f64>) -> Option<f64> {
        let gap = self.ball_gap(x);
        if !(gap > 0.0) {
            return None;
        }
        let mut v = -gap.ln();
        for f in &self.fs {
            let chol = Cholesky::new(f.eval(x))?;
            v -= 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        }
        Some(v)
    }

    fn evaluate(&self, x: &DVector<f64>, t: f64) -> Option<Eval> {
        let n = self.n;
        let mut grad = &self.c * t;
        let mut hess = DMatrix::zeros(n, n);
        let gap = self.ball_gap(x);
        if !(gap > 0.0) {
            return None;
        }
        let mut value = t * self.c.dot(x) - gap.ln();
        for i in 0..self.n_ball {
            grad[i] += 2.0 * x[i] / gap;
            hess[(i, i)] += 2.0 / gap;
            for k in 0..self.n_ball {
                hess[(i, k)] += 4.0 * x[i] * x[k] / (gap * gap);
            }
        }
        for f in &self.fs {
            let chol: Cholesky<f64, Dyn> = Cholesky::new(f.eval(x))?;
            value -= 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let finv = chol.inverse();
            let dim = f.dim;
            // B_i = F^-1 A_i restricted to the columns A_i touches
            let mut bs: Vec<(usize, Vec<usize>, DMatrix<f64>)> = Vec::with_capacity(f.terms.len());
            for (var, entries) in &f.terms {
                let mut cols: Vec<usize> = entries.iter().map(|e| e.1).collect();
                cols.sort_unstable();
                cols.dedup();
                let mut b = DMatrix::zeros(dim, cols.len());
                let mut tr = 0.0;
                for &(r, c, v) in entries {
                    let ci = cols.binary_search(&c).unwrap();
                    let mut col = b.column_mut(ci);
                    col.axpy(v, &finv.column(r), 1.0);
                    tr += v * finv[(c, r)];
                }
                grad[*var] -= tr;
                bs.push((*var, cols, b));
            }
            for (p, (vi, ci, bi)) in bs.iter().enumerate() {
                for (vk, ck, bk) in bs.iter().skip(p) {
                    // tr(B_i B_k) = sum_{b in cols_i, a in cols_k} B_i[a,b] B_k[b,a]
                    let mut s = 0.0;
                    for (ib, &b) in ci.iter().enumerate() {
                        for (ia, &a) in ck.iter().enumerate() {
                            s += bi[(a, ib)] * bk[(b, ia)];
                        }
                    }
                    hess[(*vi, *vk)] += s;
                    if vi != vk {
                        hess[(*vk, *vi)] += s;
                    }
                }
            }
        }
        Some(Eval { value, grad, hess })
    }

    /// Newton centering at barrier parameter t; true when the Newton
    /// decrement criterion was met.
    fn center(&self, x: &mut DVector<f64>, t: f64, budget: &mut usize) -> Result<bool, SdpError> {
        for _ in 0..self.max_center {
            if *budget == 0 {
                return Err(SdpError::Numerical("Newton step budget exhausted".into()));
            }
            *budget -= 1;
            let ev = self
                .evaluate(x, t)
                .ok_or_else(|| SdpError::Numerical("iterate left the interior".into()))?;
            let step = newton_step(&ev.hess, &ev.grad)?;
            let dec = -ev.grad.dot(&step);
            if dec < 0.0 {
                return Err(SdpError::Numerical("Newton direction is not a descent direction".into()));
            }
            if dec * 0.5 < 1e-10 {
                return Ok(true);
            }
            let mut alpha = 1.0;
            loop {
                let trial = &*x + &step * alpha;
                if let Some(b) = self.log_barrier(&trial) {
                    let v = t * self.c.dot(&trial) + b;
                    if v <= ev.value - 0.25 * alpha * dec {
                        *x = trial;
                        break;
                    }
                }
                alpha *= 0.5;
                if alpha < 1e-14 {
                    return Ok(false);
                }
            }
        }
        Ok(false)
    }
}

fn newton_step(h: &DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>, SdpError> {
    let n = h.nrows();
    if !(h.diagonal().min() > 0.0) {
        return Err(SdpError::Numerical("Newton system has a variable without curvature".into()));
    }
    // Jacobi scaling before the factorization, then a Levenberg shift
    // when the scaled system is too ill-conditioned to factor reliably
    let d = DVector::from_fn(n, |i, _| 1.0 / h[(i, i)].sqrt());
    let hs = DMatrix::from_fn(n, n, |i, j| h[(i, j)] * d[i] * d[j]);
    let gs = g.component_mul(&d);
    let mut shift = 0.0;
    loop {
        let mut hm = hs.clone();
        for i in 0..n {
            hm[(i, i)] += shift;
        }
        if let Some(chol) = Cholesky::new(hm) {
            let ld = chol.l_dirty().diagonal();
            let ratio = (ld.amax() / ld.min()).powi(2);
            if ratio <= 1e14 {
                return Ok(-chol.solve(&gs).component_mul(&d));
            }
        }
        shift = if shift == 0.0 { 1e-13 } else { shift * 10.0 };
        if shift > 1e-6 {
            return Err(SdpError::Numerical("Newton system condition exceeds 1e14".into()));
        }
    }
}

fn signed(c: &Constraint, margin: f64) -> SparseLmi {
    let s = match c.sense {
        Sense::PosDef => c.lmi.clone(),
        Sense::NegDef => c.lmi.scale(-1.0),
    };
    s.shift(-margin)
}

fn with_slack_var(f: &SparseLmi, s_var: usize) -> SparseLmi {
    let mut out = f.clone();
    out.terms.push((s_var, (0..f.dim).map(|i| (i, i, -1.0)).collect()));
    out
}

/// Solves the strict LMI system, optionally minimizing the objective.
pub fn sdp_solve(problem: &SdpProblem, settings: &SdpSettings, x0: Option<&DVector<f64>>) -> Result<SdpSolution, SdpError> {
    let n = problem.n;
    for c in &problem.constraints {
        if c.lmi.constant.nrows() != c.lmi.dim || c.lmi.terms.iter().any(|(k, _)| *k >= n) {
            return Err(SdpError::Invalid(format!("constraint {} does not match {n} variables", c.name)));
        }
        if c.lmi.max_asymmetry() > 1e-12 * (1.0 + c.lmi.constant.amax()) {
            return Err(SdpError::Invalid(format!("constraint {} is not symmetric", c.name)));
        }
    }
    if let Some(c) = &problem.objective {
        if c.len() != n {
            return Err(SdpError::Invalid("objective length".into()));
        }
    }
    let fs: Vec<SparseLmi> = problem.constraints.iter().map(|c| signed(c, settings.margin)).collect();
    let mut x = x0.cloned().unwrap_or_else(|| DVector::zeros(n));
    let mut budget = settings.max_newton;

    // phase 1 on (x, s)
    let min_eig = |x: &DVector<f64>| -> f64 {
        fs.iter()
            .map(|f| {
                let m = f.eval(x);
                ((&m + m.transpose()) * 0.5).symmetric_eigenvalues().min()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let s_now = min_eig(&x);
    if !(s_now > 0.0) {
        let mut p1: Vec<SparseLmi> = fs.iter().map(|f| with_slack_var(f, n)).collect();
        // s <= s_cap
        p1.push(SparseLmi { dim: 1, constant: DMatrix::from_element(1, 1, settings.s_cap), terms: vec![(n, vec![(0, 0, -1.0)])] });
        let mut c = DVector::zeros(n + 1);
        c[n] = -1.0;
        let bar = Barrier { fs: p1, n: n + 1, n_ball: n, radius2: settings.radius.powi(2), c, max_center: settings.max_center };
        let mut z = DVector::zeros(n + 1);
        z.rows_mut(0, n).copy_from(&x);
        if !(x.norm() < settings.radius) {
            return Err(SdpError::Invalid("start point outside the search ball".into()));
        }
        z[n] = (s_now - 1.0).min(settings.s_cap - 1.0);
        if !z[n].is_finite() {
            return Err(SdpError::Numerical("non-finite constraint value at the start point".into()));
        }
        let theta = bar.dim();
        let mut t = 1.0;
        loop {
            let centered = bar.center(&mut z, t, &mut budget)?;
            let s = z[n];
            if s > 0.0 {
                x = z.rows(0, n).into_owned();
                break;
            }
            // the gap bound s* <= s + theta/t holds on the central path only
            if (centered && s + theta / t < 0.0) || theta / t < settings.gap_tol {
                let xs = z.rows(0, n).into_owned();
                let binding = problem
                    .constraints
                    .iter()
                    .map(|c| (c.name.clone(), constraint_slack(c, &xs)))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|p| p.0)
                    .unwrap_or_default();
                return Err(SdpError::Infeasible { best_slack: s, binding });
            }
            t *= settings.t_growth;
        }
    }

    // phase 2
    if let Some(c) = &problem.objective {
        let bar = Barrier { fs: fs.clone(), n, n_ball: n, radius2: settings.radius.powi(2), c: c.clone(), max_center: settings.max_center };
        let theta = bar.dim();
        let mut t = 1.0;
        loop {
            bar.center(&mut x, t, &mut budget)?;
            if theta / t < settings.objective_tol * (1.0 + c.dot(&x).abs()) {
                break;
            }
            t *= settings.t_growth;
        }
    }

    let slacks: Vec<f64> = problem.constraints.iter().map(|c| constraint_slack(c, &x)).collect();
    // re-verify the verdict directly
    if let Some((i, s)) = slacks.iter().enumerate().find(|(_, s)| !(**s >= 0.5 * settings.margin)) {
        return Err(SdpError::Numerical(format!(
            "returned point fails direct check on {} (slack {s:.3e})",
            problem.constraints[i].name
        )));
    }
    Ok(SdpSolution {
        objective: problem.objective.as_ref().map(|c| c.dot(&x)),
        x,
        slacks,
        newton_steps: settings.max_newton - budget,
    })
}
