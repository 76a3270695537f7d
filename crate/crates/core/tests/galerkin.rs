use etcpde::galerkin::{analytic_dirichlet_basis, assemble_slow_system, eigensolve_sturm_liouville, SturmLiouvilleSpec};
use etcpde::presets;
use etcpde::profile::builtin;
use nalgebra::DMatrix;
use proptest::prelude::*;
use std::f64::consts::PI;
use std::time::Instant;

/// Adaptive Simpson rule, used as an oracle independent of the
/// Gauss-Legendre tables of the library.
fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64, m: f64, fm: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1) + rec(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    rec(f, a, fa, b, fb, m, fm, whole, tol, 50)
}

fn phi(j: usize, p: f64) -> f64 {
    (2.0 / PI).sqrt() * ((j + 1) as f64 * p).sin()
}

#[test]
fn analytic_spectrum_is_exact() {
    let b = analytic_dirichlet_basis(1.0, (0.0, PI), 2, 64).unwrap();
    assert_eq!(&b.eigenvalues[..2], &[-1.0, -4.0]);
    assert_eq!(b.eigenvalues[2], -9.0);
}

#[test]
fn finite_difference_spectrum_matches_within_1e_4() {
    let t = Instant::now();
    let b = eigensolve_sturm_liouville(&SturmLiouvilleSpec::dirichlet_heat(1.0, (0.0, PI)), 2000, 2).unwrap();
    let elapsed = t.elapsed().as_secs_f64();
    assert!((b.eigenvalues[0] + 1.0).abs() < 1e-4, "{:?}", b.eigenvalues);
    assert!((b.eigenvalues[1] + 4.0).abs() < 1e-4, "{:?}", b.eigenvalues);
    assert!(elapsed < 5.0, "eigensolve took {elapsed} s");
    let g = b.gram();
    assert!((g - DMatrix::identity(b.n_modes(), b.n_modes())).amax() < 1e-8);
}

#[test]
fn example1_projections_match_adaptive_quadrature() {
    let p = presets::example1();
    let basis = p.basis().unwrap();
    let sys = p.slow_system(&basis).unwrap();
    let tol = 1e-12;
    let proj = |name: &str, j: usize| {
        let g = builtin(name).unwrap();
        adaptive_simpson(&|x| g.eval(x) * phi(j, x), 0.0, PI, tol)
    };
    for j in 0..2 {
        assert!((sys.c[(0, j)] - proj("example1.c_bar", j)).abs() < 1e-8);
        assert!((sys.b1[(j, 0)] - proj("example1.b1", j)).abs() < 1e-8);
        assert!((sys.b2[(j, 0)] - proj("example1.b2.0", j)).abs() < 1e-8);
        assert!((sys.b2[(j, 1)] - proj("example1.b2.1", j)).abs() < 1e-8);
    }
    // printed closed forms of the output map and the first disturbance entry
    assert!((sys.c[(0, 0)] - 1.0).abs() < 1e-8);
    assert!((sys.c[(0, 1)] - 1.0).abs() < 1e-8);
    assert!((sys.b1[(0, 0)] - 2.0 * (2.0 / PI).sqrt()).abs() < 1e-8);
    // the entries that differ from the printed table
    assert!((sys.b1[(1, 0)] - (PI / 2.0).sqrt()).abs() < 1e-8);
    let b2 = DMatrix::from_row_slice(2, 2, &[-3.0 / PI, -5.0 / PI, -6.0 / PI, 0.0]);
    assert!((&sys.b2 - b2).amax() < 1e-8, "B2 = {}", sys.b2);
}

#[test]
fn long_domain_basis_scales_with_length() {
    let b = analytic_dirichlet_basis(0.5, (0.0, 100.0), 2, 64).unwrap();
    let k = PI / 100.0;
    assert!((b.eigenvalues[0] + 0.5 * k * k).abs() < 1e-14);
    assert!((b.eigenvalues[1] + 0.5 * 4.0 * k * k).abs() < 1e-14);
    assert!((b.gram() - DMatrix::identity(b.n_modes(), b.n_modes())).amax() < 1e-10);
}

#[test]
fn bad_arguments_are_rejected() {
    assert!(analytic_dirichlet_basis(1.0, (0.0, PI), 0, 64).is_err());
    assert!(analytic_dirichlet_basis(-1.0, (0.0, PI), 2, 64).is_err());
    let basis = analytic_dirichlet_basis(1.0, (0.0, PI), 2, 64).unwrap();
    assert!(assemble_slow_system(&basis, &[], &[], &[]).is_ok());
}

proptest! {
    #[test]
    fn analytic_basis_is_orthonormal(diffusion in 0.1f64..5.0, len in 0.5f64..20.0, m in 1usize..6) {
        let b = analytic_dirichlet_basis(diffusion, (0.0, len), m, 64).unwrap();
        let g = b.gram();
        prop_assert!((g - DMatrix::identity(b.n_modes(), b.n_modes())).amax() < 1e-9);
        for w in b.eigenvalues.windows(2) {
            prop_assert!(w[1] < w[0]);
        }
        for (j, l) in b.eigenvalues.iter().enumerate() {
            let k = (j + 1) as f64 * PI / len;
            prop_assert!((l + diffusion * k * k).abs() < 1e-10 * (1.0 + l.abs()));
        }
    }
}
