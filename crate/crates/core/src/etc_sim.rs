//! Closed-loop simulation of the switching event-triggered output feedback
//! on the slow model and on the full plant, with the static-trigger
//! baseline, trigger accounting and Lyapunov diagnostics.

use crate::galerkin::{ModalBasis, SlowSystem};
use crate::lmi::assembly::SynthesisParams;
use crate::lmi::certificate::ControllerCertificate;
use crate::mnn::{activation_integral, Mnn};
use crate::pde_sim::{simulate, slow_projection, Disturbance, FieldTrace, PlantModel, SimConfig, SimError};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, thiserror::Error)]
pub enum EtcError {
    #[error("invalid setup: {0}")]
    Invalid(String),
    #[error("slow state diverged at t = {t}")]
    Divergence { t: f64, partial: Box<ClosedLoopTrace> },
    #[error("Zeno warning: {events} consecutive events one step apart at t = {t}")]
    Zeno { t: f64, events: usize, partial: Box<ClosedLoopTrace> },
    #[error("inter-event time {min} below the waiting time {h}")]
    WaitingViolated { min: f64, h: f64 },
    #[error("disturbance energy is zero; the ratio is undefined")]
    UndefinedRatio,
    #[error(transparent)]
    Pde(#[from] SimError),
}

/// Trigger data: waiting time h, threshold eps and weight Lambda.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerConfig {
    pub h: f64,
    pub eps: f64,
    pub lambda: DMatrix<f64>,
}

impl TriggerConfig {
    pub fn from_params(p: &SynthesisParams) -> Self {
        TriggerConfig { h: p.h, eps: p.eps, lambda: p.lambda.clone() }
    }

    pub fn validate(&self, switching: bool) -> Result<(), EtcError> {
        if switching && !(self.h > 0.0) {
            return Err(EtcError::Invalid(format!("waiting time h = {} must be positive", self.h)));
        }
        if !(self.eps >= 0.0) {
            return Err(EtcError::Invalid(format!("eps = {} must be non-negative", self.eps)));
        }
        let l = &self.lambda;
        if l.nrows() != l.ncols() || l.nrows() == 0 {
            return Err(EtcError::Invalid("Lambda must be square".into()));
        }
        let sym = (l + l.transpose()) * 0.5;
        if !(sym.symmetric_eigenvalues().min() > 0.0) {
            return Err(EtcError::Invalid("Lambda must be positive definite".into()));
        }
        Ok(())
    }

    /// (y - y_k)^T Lambda (y - y_k) >= eps y^T Lambda y.
    pub fn condition(&self, y: &DVector<f64>, y_k: &DVector<f64>) -> bool {
        let e = y_k - y;
        let lhs = (e.transpose() * &self.lambda * &e)[(0, 0)];
        let rhs = self.eps * (y.transpose() * &self.lambda * y)[(0, 0)];
        lhs >= rhs
    }
}

/// Fires iff the waiting window [t_k, t_k + h) is over and the condition holds.
pub fn check_trigger(cfg: &TriggerConfig, t: f64, t_k: f64, y: &DVector<f64>, y_k: &DVector<f64>) -> bool {
    t >= t_k + cfg.h && cfg.condition(y, y_k)
}

/// Gain plus the output held since the last trigger.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingController {
    pub k: DMatrix<f64>,
    pub held: DVector<f64>,
    pub t_k: f64,
    pub chi: u8,
}

impl SwitchingController {
    pub fn new(k: DMatrix<f64>, y0: DVector<f64>) -> Self {
        SwitchingController { k, held: y0, t_k: 0.0, chi: 1 }
    }

    /// u = -K y(t_k).
    pub fn control(&self) -> DVector<f64> {
        -(&self.k * &self.held)
    }

    /// Waiting-window branch: K C (int_{t_k}^t dxi - xi(t)).
    pub fn u_sampled(&self, c: &DMatrix<f64>, integral: &DVector<f64>, xi: &DVector<f64>) -> DVector<f64> {
        &self.k * (c * (integral - xi))
    }

    /// Event-triggered branch: -K (e + C xi) with e = y(t_k) - y(t).
    pub fn u_triggered(&self, c: &DMatrix<f64>, e: &DVector<f64>, xi: &DVector<f64>) -> DVector<f64> {
        -(&self.k * (e + c * xi))
    }
}

/// Slow dynamics xi' = A xi + f(xi) + B2 u + B1 d.
pub struct SlowModel<'a> {
    pub sys: &'a SlowSystem,
    pub f: Box<dyn Fn(&DVector<f64>) -> DVector<f64> + 'a>,
}

impl<'a> SlowModel<'a> {
    /// f = W mu(V xi), no residual.
    pub fn network(sys: &'a SlowSystem, net: &'a Mnn) -> Self {
        SlowModel { sys, f: Box::new(move |x| net.forward(x)) }
    }

    /// f = W mu(V xi) + Delta A(xi) with the identification residual
    /// Delta A = truth - network, which is the true nonlinearity itself.
    pub fn with_truth(sys: &'a SlowSystem, truth: &'a dyn Fn(&DVector<f64>) -> DVector<f64>) -> Self {
        SlowModel { sys, f: Box::new(truth) }
    }

    pub fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        &self.sys.a_s * x + (self.f)(x) + &self.sys.b2 * u + &self.sys.b1 * d
    }
}

/// Step size, horizon and initial slow state.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    /// Defaults to h / 100.
    pub dt: Option<f64>,
    pub t_end: f64,
    pub x0: DVector<f64>,
}

/// Everything recorded at the step boundaries of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClosedLoopTrace {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// xi' at each boundary with the held input.
    pub derivs: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub errors: Vec<DVector<f64>>,
    pub disturbances: Vec<DVector<f64>>,
    pub chi: Vec<u8>,
    pub fired: Vec<bool>,
    pub triggers: Vec<f64>,
    pub dt: f64,
    /// 0 in static mode.
    pub h: f64,
    pub wait_steps: usize,
    pub eps: f64,
    pub switching: bool,
    /// Largest difference between the two controller branches and -K y(t_k).
    pub branch_mismatch: f64,
    pub notes: Vec<String>,
}

impl ClosedLoopTrace {
    /// Columns t, xi.., u.., y.., chi, fired, e..
    pub fn to_csv(&self) -> String {
        let dim = |v: &Vec<DVector<f64>>| v.first().map_or(0, |x| x.len());
        let (m, nu, ny) = (dim(&self.states), dim(&self.inputs), dim(&self.outputs));
        let mut s = String::from("t");
        for (p, n) in [("xi", m), ("u", nu), ("y", ny)] {
            for i in 0..n {
                let _ = write!(s, ",{p}_{}", i + 1);
            }
        }
        s.push_str(",chi,fired");
        for i in 0..ny {
            let _ = write!(s, ",e_{}", i + 1);
        }
        s.push('\n');
        for k in 0..self.times.len() {
            let _ = write!(s, "{:.17e}", self.times[k]);
            for v in [self.states.get(k), self.inputs.get(k), self.outputs.get(k)].into_iter().flatten() {
                for x in v.iter() {
                    let _ = write!(s, ",{x:.17e}");
                }
            }
            let _ = write!(s, ",{},{}", self.chi[k], self.fired[k] as u8);
            for x in self.errors[k].iter() {
                let _ = write!(s, ",{x:.17e}");
            }
            s.push('\n');
        }
        s
    }

    pub fn state_norms(&self) -> Vec<f64> {
        self.states.iter().map(|x| x.norm()).collect()
    }
}

fn wait_steps(h: f64, dt: f64) -> Result<usize, EtcError> {
    let r = h / dt;
    let n = r.round();
    if (r - n).abs() > 1e-9 * r.max(1.0) || n < 1.0 {
        return Err(EtcError::Invalid(format!("dt = {dt} must divide the waiting time h = {h}")));
    }
    Ok(n as usize)
}

const ZENO_RUN: usize = 100;

fn run(
    model: &SlowModel,
    k: &DMatrix<f64>,
    cfg: &TriggerConfig,
    dist: &Disturbance,
    settings: &RunSettings,
    switching: bool,
) -> Result<ClosedLoopTrace, EtcError> {
    cfg.validate(switching)?;
    let sys = model.sys;
    let m = sys.m();
    if settings.x0.len() != m || k.nrows() != sys.n_u() || k.ncols() != sys.n_y() || cfg.lambda.nrows() != sys.n_y() {
        return Err(EtcError::Invalid("dimensions of x0, K or Lambda do not match the slow model".into()));
    }
    if dist.channels != sys.n_d() {
        return Err(EtcError::Invalid(format!("disturbance has {} channels, B1 has {}", dist.channels, sys.n_d())));
    }
    let dt = match settings.dt {
        Some(dt) => dt,
        None if switching => cfg.h / 100.0,
        None => return Err(EtcError::Invalid("static runs need an explicit dt".into())),
    };
    if !(dt > 0.0) || !(settings.t_end > 0.0) {
        return Err(EtcError::Invalid("dt and t_end must be positive".into()));
    }
    let ws = if switching { wait_steps(cfg.h, dt)? } else { 0 };
    if switching && ws < 20 {
        return Err(EtcError::Invalid(format!("dt = {dt} does not resolve the waiting window (need dt <= h/20)")));
    }
    let steps = (settings.t_end / dt).round() as usize;
    let c = &sys.c;
    let mut tr = ClosedLoopTrace {
        dt,
        h: if switching { cfg.h } else { 0.0 },
        wait_steps: ws,
        eps: cfg.eps,
        switching,
        ..Default::default()
    };
    let mut x = settings.x0.clone();
    let mut ctrl = SwitchingController::new(k.clone(), c * &x);
    let mut x_k = x.clone();
    let mut n_k = 0usize;
    let mut run_len = 0usize;
    for n in 0..=steps {
        let t = n as f64 * dt;
        let y = c * &x;
        let fire = if n == 0 {
            true
        } else if switching {
            n - n_k >= ws && cfg.condition(&y, &ctrl.held)
        } else {
            cfg.condition(&y, &ctrl.held)
        };
        if fire {
            if n > 0 && n - n_k == 1 {
                run_len += 1;
            } else {
                run_len = 0;
            }
            ctrl.held = y.clone();
            ctrl.t_k = t;
            n_k = n;
            x_k = x.clone();
            tr.triggers.push(t);
        }
        ctrl.chi = u8::from(switching && n - n_k < ws);
        let e = &ctrl.held - &y;
        let u = ctrl.control();
        let alt = if ctrl.chi == 1 { ctrl.u_sampled(c, &(&x - &x_k), &x) } else { ctrl.u_triggered(c, &e, &x) };
        tr.branch_mismatch = tr.branch_mismatch.max((&alt - &u).amax());
        let d = dist.eval(t);
        tr.times.push(t);
        tr.derivs.push(model.rhs(&x, &u, &d));
        tr.states.push(x.clone());
        tr.inputs.push(u.clone());
        tr.outputs.push(y);
        tr.errors.push(e);
        tr.disturbances.push(d);
        tr.chi.push(ctrl.chi);
        tr.fired.push(fire);
        if !switching && run_len >= ZENO_RUN {
            return Err(EtcError::Zeno { t, events: run_len, partial: Box::new(tr) });
        }
        if n == steps {
            break;
        }
        // RK4 with u held over the step
        let f = |s: f64, z: &DVector<f64>| model.rhs(z, &u, &dist.eval(s));
        let k1 = f(t, &x);
        let k2 = f(t + 0.5 * dt, &(&x + &k1 * (0.5 * dt)));
        let k3 = f(t + 0.5 * dt, &(&x + &k2 * (0.5 * dt)));
        let k4 = f(t + dt, &(&x + &k3 * dt));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        if !x.iter().all(|v| v.is_finite()) || x.amax() > 1e6 {
            return Err(EtcError::Divergence { t: t + dt, partial: Box::new(tr) });
        }
    }
    Ok(tr)
}

/// Switching law: waiting window of length h after each event, then the
/// trigger condition at every step boundary.
pub fn simulate_switching(
    model: &SlowModel,
    k: &DMatrix<f64>,
    cfg: &TriggerConfig,
    dist: &Disturbance,
    settings: &RunSettings,
) -> Result<ClosedLoopTrace, EtcError> {
    run(model, k, cfg, dist, settings, true)
}

/// Static baseline: the condition is checked at every step, no waiting.
pub fn simulate_static(
    model: &SlowModel,
    k: &DMatrix<f64>,
    cfg: &TriggerConfig,
    dist: &Disturbance,
    settings: &RunSettings,
) -> Result<ClosedLoopTrace, EtcError> {
    run(model, k, cfg, dist, settings, false)
}

/// Full plant under the switching law, fed by the measured output.
pub fn simulate_switching_full_pde(
    plant: &PlantModel,
    k: &DMatrix<f64>,
    cfg: &TriggerConfig,
    dist: &Disturbance,
    sim: &SimConfig,
) -> Result<(FieldTrace, ClosedLoopTrace), EtcError> {
    cfg.validate(true)?;
    let ws = wait_steps(cfg.h, sim.dt)?;
    if k.nrows() != plant.b2.len() || k.ncols() != plant.c_bar.len() {
        return Err(EtcError::Invalid("K does not match the plant's inputs and outputs".into()));
    }
    let mut tr = ClosedLoopTrace { dt: sim.dt, h: cfg.h, wait_steps: ws, eps: cfg.eps, switching: true, ..Default::default() };
    let mut held: Option<DVector<f64>> = None;
    let mut n = 0usize;
    let mut n_k = 0usize;
    let mut controller = |t: f64, y: &[f64]| -> Vec<f64> {
        let y = DVector::from_column_slice(y);
        let fire = match &held {
            None => true,
            Some(yk) => n - n_k >= ws && cfg.condition(&y, yk),
        };
        if fire {
            held = Some(y.clone());
            n_k = n;
            tr.triggers.push(t);
        }
        let yk = held.as_ref().expect("set on the first call");
        let u = -(k * yk);
        tr.times.push(t);
        tr.errors.push(yk - &y);
        tr.outputs.push(y);
        tr.inputs.push(u.clone());
        tr.disturbances.push(dist.eval(t));
        tr.chi.push(u8::from(n - n_k < ws));
        tr.fired.push(fire);
        n += 1;
        u.as_slice().to_vec()
    };
    let field = simulate(plant, Some(&mut controller), dist, sim)?;
    tr.notes.push("no slow states recorded; see full_pde_slow_states".into());
    Ok((field, tr))
}

/// Slow projections of the stored fields with their times.
pub fn full_pde_slow_states(field: &FieldTrace, basis: &ModalBasis) -> (Vec<f64>, Vec<DVector<f64>>) {
    (field.times.clone(), slow_projection(field, basis))
}

/// Trigger statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerSummary {
    pub count: usize,
    pub min_inter_event: Option<f64>,
    pub mean_inter_event: Option<f64>,
    pub max_inter_event: Option<f64>,
    pub h: f64,
    pub eps: f64,
    pub switching: bool,
}

/// Counts the events; in switching mode every inter-event time must be
/// at least h.
pub fn count_triggers(trace: &ClosedLoopTrace) -> Result<TriggerSummary, EtcError> {
    let gaps: Vec<f64> = trace.triggers.windows(2).map(|w| w[1] - w[0]).collect();
    let min = gaps.iter().copied().reduce(f64::min);
    let s = TriggerSummary {
        count: trace.triggers.len(),
        min_inter_event: min,
        mean_inter_event: (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64),
        max_inter_event: gaps.iter().copied().reduce(f64::max),
        h: trace.h,
        eps: trace.eps,
        switching: trace.switching,
    };
    if let (true, Some(min)) = (trace.switching, min) {
        if min < trace.h * (1.0 - 1e-9) {
            return Err(EtcError::WaitingViolated { min, h: trace.h });
        }
    }
    Ok(s)
}

/// Storage function along a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub times: Vec<f64>,
    pub v: Vec<f64>,
    /// (V1, V2, V3, V4) per sample.
    pub parts: Vec<[f64; 4]>,
    /// Samples before this time are warm-up and not checked.
    pub warmup: f64,
    pub tolerance: f64,
    /// (t_start, t_end, excess increase) per offending step.
    pub violations: Vec<(f64, f64, f64)>,
}

impl LyapunovReport {
    pub fn non_increasing(&self) -> bool {
        self.violations.is_empty()
    }
}

/// V1..V4 on a slow-model trace. Between events V may only grow by the
/// disturbance allowance 2|d|^2 dt plus 1e-6 V(0); events reset the delay
/// and are excluded.
pub fn lyapunov_evaluate(trace: &ClosedLoopTrace, cert: &ControllerCertificate, net: &Mnn) -> Result<LyapunovReport, EtcError> {
    let m = cert.m();
    if trace.states.first().is_some_and(|x| x.len() != m) || net.v.nrows() != cert.params.n_h() {
        return Err(EtcError::Invalid("trace, certificate and network dimensions differ".into()));
    }
    if !trace.switching {
        return Err(EtcError::Invalid("the storage function needs a switching trace".into()));
    }
    let h = trace.h;
    let alpha = cert.params.alpha;
    let he = |a: &DMatrix<f64>| a + a.transpose();
    let q1 = &cert.q1;
    let q2 = &cert.q2;
    let w3a = he(q1) * 0.5;
    let w3b = he(&(q1 - q2 * 2.0)) * 0.5;
    let w3c = q2 - q1;
    let gap: Vec<f64> = cert.params.g_max.iter().zip(&cert.params.g_min).map(|(a, b)| a - b).collect();
    let quad = |a: &DVector<f64>, mm: &DMatrix<f64>, b: &DVector<f64>| (a.transpose() * mm * b)[(0, 0)];

    let mut parts = Vec::with_capacity(trace.times.len());
    let mut n_k = 0usize;
    for (n, x) in trace.states.iter().enumerate() {
        if trace.fired[n] {
            n_k = n;
        }
        let waiting = trace.chi[n] == 1;
        let tau = if waiting { (n - n_k) as f64 * trace.dt } else { h };
        let xt = if waiting {
            trace.states[n_k].clone()
        } else {
            trace.states[n.saturating_sub(trace.wait_steps)].clone()
        };
        let mut rho = DVector::zeros(2 * m);
        rho.rows_mut(0, m).copy_from(x);
        rho.rows_mut(m, m).copy_from(&xt);
        let v1 = quad(&rho, &cert.p, &rho);
        let (mut v2, mut v3) = (0.0, 0.0);
        if waiting && n > n_k {
            let t = trace.times[n];
            let g = |i: usize| (2.0 * alpha * (trace.times[i] - t)).exp() * quad(&trace.derivs[i], &cert.u, &trace.derivs[i]);
            let mut integral = 0.0;
            for i in n_k..n {
                integral += 0.5 * (g(i) + g(i + 1)) * trace.dt;
            }
            v2 = (h - tau) * integral;
            v3 = (h - tau) * (quad(x, &w3a, x) + quad(&xt, &w3b, &xt) + 2.0 * quad(x, &w3c, &xt));
        }
        let s = &net.v * x;
        let v4: f64 = (0..s.len())
            .map(|i| 2.0 * cert.omega[(i, i)] * gap[i] * activation_integral(s[i], net.q[i], net.r[i]))
            .sum();
        parts.push([v1, v2, v3, v4]);
    }
    let v: Vec<f64> = parts.iter().map(|p| p.iter().sum()).collect();
    let tolerance = 1e-6 * v.first().copied().unwrap_or(0.0).abs();
    let mut violations = Vec::new();
    for n in 0..v.len().saturating_sub(1) {
        if trace.times[n] < h || trace.fired[n + 1] {
            continue;
        }
        let d2 = trace.disturbances[n].norm_squared().max(trace.disturbances[n + 1].norm_squared());
        let excess = v[n + 1] - v[n] - 2.0 * d2 * trace.dt - tolerance;
        if excess > 0.0 {
            violations.push((trace.times[n], trace.times[n + 1], excess));
        }
    }
    Ok(LyapunovReport { times: trace.times.clone(), v, parts, warmup: h, tolerance, violations })
}

/// int y^T y / int d^T d by the trapezoidal rule.
pub fn hinf_energy_ratio(trace: &ClosedLoopTrace) -> Result<f64, EtcError> {
    let integral = |v: &[DVector<f64>]| -> f64 {
        (1..trace.times.len())
            .map(|i| 0.5 * (v[i - 1].norm_squared() + v[i].norm_squared()) * (trace.times[i] - trace.times[i - 1]))
            .sum()
    };
    let dd = integral(&trace.disturbances);
    if !(dd > 0.0) {
        return Err(EtcError::UndefinedRatio);
    }
    Ok(integral(&trace.outputs) / dd)
}
