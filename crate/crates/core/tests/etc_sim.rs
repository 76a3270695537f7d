use etcpde::etc_sim::{
    check_trigger, count_triggers, hinf_energy_ratio, lyapunov_evaluate, simulate_static, simulate_switching, ClosedLoopTrace, EtcError, RunSettings,
    SlowModel, SwitchingController, TriggerConfig,
};
use etcpde::galerkin::SlowSystem;
use etcpde::lmi::assembly::Mode;
use etcpde::lmi::synthesis::{synthesize_gain_with, SynthesisOptions};
use etcpde::mnn::{activation, activation_integral};
use etcpde::pde_sim::{Disturbance, DisturbanceModel};
use etcpde::presets;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn ex1() -> (SlowSystem, etcpde::mnn::Mnn, TriggerConfig, DMatrix<f64>) {
    let p = presets::example1();
    let (_, sys, params) = p.published_params().unwrap();
    (sys, p.published_network(), TriggerConfig::from_params(&params), p.reference_k)
}

fn cfg(h: f64, eps: f64) -> TriggerConfig {
    TriggerConfig { h, eps, lambda: DMatrix::identity(1, 1) }
}

fn v1(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

#[test]
fn trigger_check_examples() {
    let c = cfg(0.1, 0.5);
    // inside the waiting window nothing fires
    assert!(!check_trigger(&c, 0.05, 0.0, &v1(0.0), &v1(10.0)));
    // |e|^2 = 1 >= 0.5 * 1
    assert!(check_trigger(&c, 0.1, 0.0, &v1(1.0), &v1(2.0)));
    // |e|^2 = 0.01 < 0.5
    assert!(!check_trigger(&c, 0.3, 0.0, &v1(1.0), &v1(1.1)));
    // eps = 0 fires as soon as the window closes
    let z = cfg(0.1, 0.0);
    assert!(check_trigger(&z, 0.1, 0.0, &v1(1.0), &v1(1.0)));
    assert!(!check_trigger(&z, 0.0999, 0.0, &v1(1.0), &v1(1.0)));
}

#[test]
fn invalid_trigger_settings_are_rejected() {
    assert!(cfg(0.0, 0.1).validate(true).is_err());
    assert!(cfg(0.0, 0.1).validate(false).is_ok());
    assert!(cfg(0.1, -1.0).validate(true).is_err());
    let mut c = cfg(0.1, 0.1);
    c.lambda = DMatrix::from_element(1, 1, -1.0);
    assert!(c.validate(true).is_err());
}

#[test]
fn zero_threshold_samples_periodically() {
    let (sys, net, mut c, k) = ex1();
    c.eps = 0.0;
    let model = SlowModel::network(&sys, &net);
    let x0 = presets::example1().x0;
    let tr = simulate_switching(&model, &k, &c, &Disturbance::zero(1), &RunSettings { dt: None, t_end: 2.2, x0 }).unwrap();
    assert_eq!(tr.triggers.len(), 21);
    for w in tr.triggers.windows(2) {
        assert!((w[1] - w[0] - c.h).abs() < 1e-9);
    }
}

#[test]
fn zero_state_stays_zero() {
    let (sys, net, c, k) = ex1();
    let model = SlowModel::network(&sys, &net);
    let tr = simulate_switching(&model, &k, &c, &Disturbance::zero(1), &RunSettings { dt: None, t_end: 3.0, x0: DVector::zeros(2) }).unwrap();
    assert!(tr.states.iter().all(|x| x.amax() == 0.0));
    assert!(tr.inputs.iter().all(|u| u.amax() == 0.0));
}

#[test]
fn zero_gain_linear_model_matches_matrix_exponential() {
    let (sys, _, c, _) = ex1();
    let zero = |x: &DVector<f64>| DVector::zeros(x.len());
    let model = SlowModel::with_truth(&sys, &zero);
    let x0 = DVector::from_vec(vec![0.3, -0.2]);
    let k = DMatrix::zeros(2, 1);
    let tr = simulate_switching(&model, &k, &c, &Disturbance::zero(1), &RunSettings { dt: None, t_end: 2.0, x0: x0.clone() }).unwrap();
    for (t, x) in tr.times.iter().zip(&tr.states).step_by(37) {
        let exact = (&sys.a_s * *t).exp() * &x0;
        assert!((x - &exact).amax() < 1e-9 * (1.0 + exact.amax()), "t = {t}");
    }
    // with K = 0 the trigger law has no influence on the state
    let st = simulate_static(&model, &k, &cfg(0.0, 0.3), &Disturbance::zero(1), &RunSettings { dt: Some(tr.dt), t_end: 2.0, x0 }).unwrap();
    assert_eq!(st.states, tr.states);
}

#[test]
fn input_is_held_between_events() {
    let (sys, net, c, k) = ex1();
    let model = SlowModel::network(&sys, &net);
    let dist = Disturbance::new(DisturbanceModel::default(), 0.1, 1);
    let x0 = presets::example1().x0;
    let tr = simulate_switching(&model, &k, &c, &dist, &RunSettings { dt: None, t_end: 5.0, x0 }).unwrap();
    for n in 1..tr.times.len() {
        if !tr.fired[n] {
            assert_eq!(tr.inputs[n], tr.inputs[n - 1], "input changed without an event at t = {}", tr.times[n]);
        }
    }
    assert!(tr.branch_mismatch < 1e-12);
    let s = count_triggers(&tr).unwrap();
    assert!(s.min_inter_event.unwrap() >= c.h * (1.0 - 1e-9));
}

#[test]
fn event_count_does_not_grow_with_threshold() {
    let (sys, net, c, k) = ex1();
    let model = SlowModel::network(&sys, &net);
    let x0 = presets::example1().x0;
    let mut last = usize::MAX;
    for eps in [0.0, 0.01, 0.1, 1.0, 10.0] {
        let mut ce = c.clone();
        ce.eps = eps;
        let tr = simulate_switching(&model, &k, &ce, &Disturbance::zero(1), &RunSettings { dt: None, t_end: 10.0, x0: x0.clone() }).unwrap();
        let n = tr.triggers.len();
        assert!(n <= last, "eps = {eps}: {n} events after {last}");
        last = n;
    }
}

#[test]
fn huge_threshold_keeps_the_first_sample() {
    // with a constant output the error stays zero and never beats eps |y|^2
    let (sys, _, _, _) = ex1();
    let zero = |x: &DVector<f64>| DVector::zeros(x.len());
    let mut frozen = sys.clone();
    frozen.a_s.fill(0.0);
    let model = SlowModel::with_truth(&frozen, &zero);
    let k = DMatrix::zeros(2, 1);
    let tr = simulate_switching(&model, &k, &cfg(0.1, 1e9), &Disturbance::zero(1), &RunSettings {
        dt: None,
        t_end: 3.0,
        x0: DVector::from_vec(vec![0.5, 0.2]),
    })
    .unwrap();
    assert_eq!(tr.triggers, vec![0.0]);
}

#[test]
fn static_trigger_with_zero_threshold_is_flagged_as_zeno() {
    let (sys, net, _, k) = ex1();
    let model = SlowModel::network(&sys, &net);
    let x0 = presets::example1().x0;
    match simulate_static(&model, &k, &cfg(0.0, 0.0), &Disturbance::zero(1), &RunSettings { dt: Some(1e-3), t_end: 1.0, x0 }) {
        Err(EtcError::Zeno { events, .. }) => assert!(events >= 100),
        other => panic!("expected a Zeno warning, got {:?}", other.map(|t| t.triggers.len())),
    }
}

#[test]
fn static_run_needs_explicit_step_and_switching_needs_resolution() {
    let (sys, net, c, k) = ex1();
    let model = SlowModel::network(&sys, &net);
    let x0 = presets::example1().x0;
    assert!(simulate_static(&model, &k, &c, &Disturbance::zero(1), &RunSettings { dt: None, t_end: 1.0, x0: x0.clone() }).is_err());
    assert!(simulate_switching(&model, &k, &c, &Disturbance::zero(1), &RunSettings { dt: Some(0.011), t_end: 1.0, x0: x0.clone() }).is_err());
    assert!(simulate_switching(&model, &k, &c, &Disturbance::zero(1), &RunSettings { dt: Some(0.003), t_end: 1.0, x0 }).is_err());
}

#[test]
fn waiting_violation_is_reported() {
    let tr = ClosedLoopTrace { triggers: vec![0.0, 0.1, 0.15], h: 0.1, switching: true, ..Default::default() };
    assert!(matches!(count_triggers(&tr), Err(EtcError::WaitingViolated { .. })));
    let ok = ClosedLoopTrace { triggers: vec![0.0, 0.1, 0.25], h: 0.1, switching: true, ..Default::default() };
    let s = count_triggers(&ok).unwrap();
    assert_eq!(s.count, 3);
    assert!((s.mean_inter_event.unwrap() - 0.125).abs() < 1e-12);
}

#[test]
fn energy_ratio_edge_cases() {
    let times: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
    let mut tr = ClosedLoopTrace { times: times.clone(), ..Default::default() };
    tr.outputs = times.iter().map(|_| v1(0.0)).collect();
    tr.disturbances = times.iter().map(|_| v1(0.5)).collect();
    assert_eq!(hinf_energy_ratio(&tr).unwrap(), 0.0);
    tr.outputs = times.iter().map(|_| v1(1.0)).collect();
    assert!((hinf_energy_ratio(&tr).unwrap() - 4.0).abs() < 1e-12);
    tr.disturbances = times.iter().map(|_| v1(0.0)).collect();
    assert!(matches!(hinf_energy_ratio(&tr), Err(EtcError::UndefinedRatio)));
}

#[test]
fn csv_has_named_columns() {
    let (sys, net, c, k) = ex1();
    let model = SlowModel::network(&sys, &net);
    let tr = simulate_switching(&model, &k, &c, &Disturbance::zero(1), &RunSettings { dt: None, t_end: 0.5, x0: presets::example1().x0 }).unwrap();
    let csv = tr.to_csv();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("t,"));
    let cols = header.split(',').count();
    assert_eq!(lines.count(), tr.times.len());
    assert!(csv.lines().skip(1).all(|l| l.split(',').count() == cols));
}

#[test]
fn storage_function_decreases_without_disturbance() {
    let p = presets::example1();
    let (_, sys, params) = p.published_params().unwrap();
    let net = p.published_network();
    let opts = SynthesisOptions { mode: Mode::NoDisturbance, ..Default::default() };
    let cert = synthesize_gain_with(&params, &opts).expect("disturbance-free synthesis");
    let model = SlowModel::network(&sys, &net);
    let c = TriggerConfig::from_params(&cert.params);
    let tr = simulate_switching(&model, &cert.k, &c, &Disturbance::zero(1), &RunSettings { dt: None, t_end: 8.0, x0: p.x0.clone() }).unwrap();
    let rep = lyapunov_evaluate(&tr, &cert, &net).unwrap();
    assert!(rep.non_increasing(), "first violations: {:?}", &rep.violations[..rep.violations.len().min(5)]);
    assert!(rep.v.last().unwrap() < &rep.v[0]);
    assert!(rep.parts.iter().all(|p| p[0] >= 0.0 && p[3] >= 0.0));
}

proptest! {
    #[test]
    fn controller_branches_agree(x in prop::collection::vec(-5.0f64..5.0, 2), xk in prop::collection::vec(-5.0f64..5.0, 2),
                                 k in prop::collection::vec(-5.0f64..5.0, 2), c in prop::collection::vec(-2.0f64..2.0, 2)) {
        let x = DVector::from_vec(x);
        let xk = DVector::from_vec(xk);
        let c = DMatrix::from_row_slice(1, 2, &c);
        let ctrl = SwitchingController::new(DMatrix::from_column_slice(2, 1, &k), &c * &xk);
        let u = ctrl.control();
        let a = ctrl.u_sampled(&c, &(&x - &xk), &x);
        let e = &ctrl.held - &c * &x;
        let b = ctrl.u_triggered(&c, &e, &x);
        prop_assert!((&a - &u).amax() < 1e-10);
        prop_assert!((&b - &u).amax() < 1e-10);
    }

    #[test]
    fn activation_integral_matches_quadrature(s in -20.0f64..20.0, q in 0.1f64..3.0, r in 0.1f64..3.0) {
        let n = 2000;
        let hs = s / n as f64;
        let mut acc = activation(0.0, q, r) + activation(s, q, r);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * activation(i as f64 * hs, q, r);
        }
        let simpson = acc * hs / 3.0;
        let closed = activation_integral(s, q, r);
        prop_assert!((closed - simpson).abs() < 1e-8 * (1.0 + closed.abs()));
        prop_assert!(closed >= 0.0);
    }
}
