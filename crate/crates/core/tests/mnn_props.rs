use etcpde::mnn::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jacobian_matches_central_differences(seed in 0u64..10_000, m in 1usize..4, nh in 1usize..6,
                                            x in prop::collection::vec(-2.0f64..2.0, 3)) {
        let net = Mnn::random(m, nh, 1.0, 1.0, seed);
        let xi = DVector::from_iterator(m, x.into_iter().take(m));
        let j = net.jacobian(&xi);
        let p0 = net.params();
        for k in 0..p0.len() {
            let mut a = net.clone();
            let mut b = net.clone();
            let mut pa = p0.clone();
            let mut pb = p0.clone();
            pa[k] += 1e-6;
            pb[k] -= 1e-6;
            a.set_params(&pa);
            b.set_params(&pb);
            let fd = (a.forward(&xi) - b.forward(&xi)) / 2e-6;
            for i in 0..m {
                let an = j[(i, k)];
                prop_assert!((fd[i] - an).abs() <= 1e-5 * an.abs().max(1e-3), "{} vs {}", fd[i], an);
            }
        }
    }

    #[test]
    fn sector_property(q in 0.1f64..5.0, r in 0.1f64..5.0, s in -50.0f64..50.0) {
        prop_assume!(s.abs() > 1e-9);
        let net = Mnn::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0), vec![q], vec![r]).unwrap();
        let b = sector_bounds(&net);
        let slope = activation(s, q, r) / s;
        prop_assert!(slope >= b.g_min[0] - 1e-9 && slope <= b.g_max[0] + 1e-9);
        prop_assert!((activation(-s, q, r) + activation(s, q, r)).abs() < 1e-12);
    }

    #[test]
    fn accepted_losses_never_increase(seed in 0u64..1000) {
        let teacher = Mnn::random(2, 3, 1.0, 1.0, seed + 1);
        let inputs = Region::cube(2, -1.0, 1.0).grid(0.5);
        let targets: Vec<_> = inputs.iter().map(|x| teacher.forward(x).map(|v| v + v * v)).collect();
        let data = TrainingSet { inputs, targets, dt_s: 1e-3, warnings: vec![] };
        let cfg = LmConfig { k_max: 40, ..LmConfig::default() };
        let h = match train_lm(&Mnn::random(2, 4, 1.0, 1.0, seed), &data, &cfg, None) {
            Ok(r) => r.history,
            Err(MnnError::Stalled { best, .. }) => best.history,
            Err(e) => panic!("{e}"),
        };
        prop_assert!(h.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn scaling_w_scales_output(seed in 0u64..1000, c in -3.0f64..3.0) {
        let net = Mnn::random(2, 5, 1.0, 1.0, seed);
        let mut scaled = net.clone();
        scaled.w *= c;
        let x = DVector::from_vec(vec![0.3, -1.1]);
        prop_assert!((scaled.forward(&x) - net.forward(&x) * c).norm() < 1e-12);
        prop_assert_eq!(net.forward(&DVector::zeros(2)), DVector::zeros(2));
    }
}

#[test]
fn dense_sector_scan() {
    for (q, r) in [(1.0, 1.0), (2.0, 1.0), (0.5, 3.0)] {
        let gmax = q / (2.0 * r);
        let mut worst: f64 = 0.0;
        for k in 1..=100_000 {
            let s = -50.0 + 100.0 * k as f64 / 100_001.0;
            worst = worst.max(activation(s, q, r) / s);
        }
        assert!(worst <= gmax + 1e-9);
        assert!((activation_slope(0.0, q, r) - gmax).abs() < 1e-15);
    }
}
