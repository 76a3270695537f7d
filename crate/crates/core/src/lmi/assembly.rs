//! Block assembly of the Lyapunov-Krasovskii matrix inequalities.
//!
//! One routine builds every corner matrix from affine expressions, so the
//! same code serves the solver (variables free) and certificate checks
//! (every expression constant). The stacked state is
//! [xi, xi', xi(t - tau), e, mu, Delta A, d, nu]; `d` only appears in the
//! H-infinity matrices and `nu` only at the tau -> h corners.

use super::affine::{Affine, BlockSym};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AssemblyError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

/// Data fixed before synthesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisParams {
    pub a_s: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// Network output weights W* (m x n_h).
    pub w: DMatrix<f64>,
    /// Network input weights V* (n_h x m).
    pub v: DMatrix<f64>,
    pub delta: f64,
    pub g_min: Vec<f64>,
    pub g_max: Vec<f64>,
    /// Waiting time.
    pub h: f64,
    pub eps: f64,
    /// Trigger weight (n_y x n_y).
    pub lambda: DMatrix<f64>,
    pub alpha: f64,
    pub beta2: f64,
    /// Fixed beta_1, or None to make it a decision variable.
    pub beta1: Option<f64>,
    /// Disturbance bound.
    pub d1: f64,
}

impl SynthesisParams {
    pub fn m(&self) -> usize {
        self.a_s.nrows()
    }
    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }
    pub fn n_d(&self) -> usize {
        self.b1.ncols()
    }
    pub fn n_u(&self) -> usize {
        self.b2.ncols()
    }
    pub fn n_h(&self) -> usize {
        self.v.nrows()
    }

    fn gdiag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v))
    }

    /// zeta_1 = G_min V*
    pub fn zeta1(&self) -> DMatrix<f64> {
        Self::gdiag(&self.g_min) * &self.v
    }
    /// zeta_2 = G_max V*
    pub fn zeta2(&self) -> DMatrix<f64> {
        Self::gdiag(&self.g_max) * &self.v
    }
    /// zeta_3 = (G_min + G_max) V*
    pub fn zeta3(&self) -> DMatrix<f64> {
        self.zeta1() + self.zeta2()
    }
    /// zeta_4 = (G_max - G_min) V*
    pub fn zeta4(&self) -> DMatrix<f64> {
        self.zeta2() - self.zeta1()
    }

    pub fn validate(&self) -> Result<(), AssemblyError> {
        let m = self.m();
        let dim = |what: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(AssemblyError::Dimension(what.to_string()))
            }
        };
        dim("A_s must be square", self.a_s.ncols() == m)?;
        dim("B_2 rows", self.b2.nrows() == m)?;
        dim("B_1 rows", self.b1.nrows() == m)?;
        dim("C columns", self.c.ncols() == m)?;
        dim("W* must be m x n_h", self.w.nrows() == m && self.w.ncols() == self.n_h())?;
        dim("V* must be n_h x m", self.v.ncols() == m)?;
        dim("sector bounds per neuron", self.g_min.len() == self.n_h() && self.g_max.len() == self.n_h())?;
        dim("Lambda must be n_y x n_y", self.lambda.nrows() == self.n_y() && self.lambda.ncols() == self.n_y())?;
        let bad = |s: &str| Err(AssemblyError::Invalid(s.to_string()));
        if !(self.h > 0.0) {
            return bad("h must be positive");
        }
        if !(self.eps >= 0.0) {
            return bad("epsilon must be non-negative");
        }
        if !(self.delta >= 0.0) {
            return bad("delta must be non-negative");
        }
        if !(self.beta2 > 0.0) {
            return bad("beta_2 must be positive");
        }
        if let Some(b) = self.beta1 {
            if !(b > 0.0) {
                return bad("beta_1 must be positive");
            }
        }
        if !(self.alpha >= 0.0) {
            return bad("alpha must be non-negative");
        }
        if self.g_min.iter().zip(&self.g_max).any(|(a, b)| !(0.0 <= *a && a <= b)) {
            return bad("sector bounds need 0 <= g_min <= g_max");
        }
        let lam = (&self.lambda + self.lambda.transpose()) * 0.5;
        if (&self.lambda - &lam).amax() > 1e-12 || !(lam.symmetric_eigenvalues().min() > 0.0) {
            return bad("Lambda must be symmetric positive definite");
        }
        Ok(())
    }
}

/// The four corner cases: chi = 1 or 0, tau -> 0 or tau -> h.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Corner {
    /// chi = 1, tau -> 0
    C1,
    /// chi = 1, tau -> h
    C2,
    /// chi = 0, tau -> 0
    C3,
    /// chi = 0, tau -> h
    C4,
}

impl Corner {
    pub const ALL: [Corner; 4] = [Corner::C1, Corner::C2, Corner::C3, Corner::C4];

    pub fn sampled(self) -> bool {
        matches!(self, Corner::C1 | Corner::C2)
    }

    pub fn at_h(self) -> bool {
        matches!(self, Corner::C2 | Corner::C4)
    }

    /// 1-based index used in reports (Phi_1..Phi_4).
    pub fn index(self) -> usize {
        match self {
            Corner::C1 => 1,
            Corner::C2 => 2,
            Corner::C3 => 3,
            Corner::C4 => 4,
        }
    }

    pub fn from_index(i: usize) -> Option<Corner> {
        Corner::ALL.get(i.wrapping_sub(1)).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Bounded disturbance handled by Young's inequality.
    Stability,
    /// d = 0: the disturbance squares are dropped.
    NoDisturbance,
    /// Explicit d channel with -gamma^2 and the output energy term.
    Hinf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Form {
    /// Quadratic terms written out; needs constant expressions.
    Bmi,
    /// Quadratic terms moved into Schur-complement columns.
    Lmi,
    /// `Lmi` with the constant Schur diagonals congruence-scaled to -I,
    /// which keeps the solver's common slack on a uniform scale.
    LmiScaled,
}

/// Matrix blocks of the certificate, as affine expressions.
#[derive(Debug, Clone)]
pub struct PhiVars {
    /// 2m x 2m
    pub p: Affine,
    pub u: Affine,
    pub q1: Affine,
    pub q2: Affine,
    /// n_h x n_h diagonal
    pub omega: Affine,
    /// n_h x n_h diagonal
    pub l: Affine,
    pub m1: Affine,
    pub m2: Affine,
    pub m3: Affine,
    pub n: Affine,
    /// N B_2 K (m x n_y)
    pub xi1: Affine,
    /// P_11 B_2 K (m x n_y)
    pub xi2: Affine,
    /// 1 x 1
    pub beta1: Affine,
    /// rho = gamma^2 (1 x 1), H-infinity only
    pub rho: Option<Affine>,
}

impl PhiVars {
    pub fn p11(&self) -> Affine {
        let m = self.p.nrows() / 2;
        self.p.view(0, 0, m, m)
    }
    pub fn p12(&self) -> Affine {
        let m = self.p.nrows() / 2;
        self.p.view(0, m, m, m)
    }
    pub fn p22(&self) -> Affine {
        let m = self.p.nrows() / 2;
        self.p.view(m, m, m, m)
    }
}

fn const_part(a: &Affine, what: &str) -> DMatrix<f64> {
    assert!(a.is_constant(), "{what} must be constant in the BMI form");
    a.constant.clone()
}

/// Xi~ = P + h [[He(Q1)/2, -Q1 + Q2], [*, He(Q1)/2 - He(Q2)]].
pub fn assemble_xi_tilde(vars: &PhiVars, h: f64) -> BlockSym {
    let m = vars.q1.nrows();
    let mut b = BlockSym::new(vec![m, m], vec!["xi".into(), "xi_tau".into()]);
    b.set(0, 0, vars.q1.he().scale(0.5 * h).add(&vars.p11()));
    b.set(0, 1, vars.q2.sub(&vars.q1).scale(h).add(&vars.p12()));
    b.set(1, 1, vars.q1.he().scale(0.5).sub(&vars.q2.he()).scale(h).add(&vars.p22()));
    b
}

/// Q of the Lyapunov bounds: Xi~ - P divided by h.
pub fn q_matrix(q1: &DMatrix<f64>, q2: &DMatrix<f64>) -> DMatrix<f64> {
    let m = q1.nrows();
    let mut q = DMatrix::zeros(2 * m, 2 * m);
    q.view_mut((0, 0), (m, m)).copy_from(&((q1 + q1.transpose()) * 0.5));
    q.view_mut((0, m), (m, m)).copy_from(&(q2 - q1));
    q.view_mut((m, 0), (m, m)).copy_from(&(q2 - q1).transpose());
    q.view_mut((m, m), (m, m)).copy_from(&((q1 + q1.transpose()) * 0.5 - (q2 + q2.transpose())));
    q
}

/// One corner matrix.
pub fn assemble(params: &SynthesisParams, vars: &PhiVars, corner: Corner, mode: Mode, form: Form) -> BlockSym {
    let m = params.m();
    let ny = params.n_y();
    let nd = params.n_d();
    let nh = params.n_h();
    let h = params.h;
    let hm = if corner.at_h() { 0.0 } else { h };
    let hinf = mode == Mode::Hinf;
    let c = &params.c;
    let z1 = params.zeta1();
    let z2 = params.zeta2();
    let z3 = params.zeta3();
    let z4 = params.zeta4();
    let p11 = vars.p11();
    let p12 = vars.p12();
    let eye_m = DMatrix::<f64>::identity(m, m);

    let mut sizes = vec![m, m, m, ny, nh, m];
    let mut names: Vec<String> = ["xi", "dxi", "xi_tau", "e", "mu", "dA"].iter().map(|s| s.to_string()).collect();
    if hinf {
        sizes.push(nd);
        names.push("d".into());
    }
    if corner.at_h() {
        sizes.push(m);
        names.push("nu".into());
    }
    // Schur columns of the LMI form
    let lmi = form != Form::Bmi;
    let fixed_beta1 = params.beta1.is_some();
    let trig = if hinf {
        Some(params.eps * &params.lambda + DMatrix::identity(ny, ny))
    } else if params.eps > 0.0 {
        Some(params.eps * &params.lambda)
    } else {
        None
    };
    let dist_squares = mode == Mode::Stability;
    if lmi {
        if fixed_beta1 {
            sizes.push(m);
            names.push("s_delta".into());
        }
        sizes.extend([nh, nh]);
        names.extend(["s_zeta1".into(), "s_zeta2".into()]);
        if trig.is_some() {
            sizes.push(ny);
            names.push("s_c".into());
        }
        if dist_squares {
            sizes.extend([nd, nd]);
            names.extend(["s_p11b1".into(), "s_nb1".into()]);
        }
    }
    let mut b = BlockSym::new(sizes, names);
    let ix = |b: &BlockSym, n: &str| b.index(n).unwrap();
    let (xi, dxi, xt, e, mu, da) = (0, 1, 2, 3, 4, 5);

    // (xi, xi)
    let mut b11 = p11.mul(&params.a_s).he().sub(&vars.xi2.mul(c).he()).sub(&vars.q1.he().scale(0.5)).add(&vars.m1.he());
    if form == Form::Bmi || !fixed_beta1 {
        // beta1 delta^2 I
        let bd = DMatrix::identity(m, m) * (params.delta * params.delta);
        b11 = b11.add(&scalar_times(&vars.beta1, &bd));
    }
    if form == Form::Bmi {
        // -(zeta1^T L zeta2 + *) / 2
        b11 = b11.sub(&vars.l.lmul(&z1.transpose()).mul(&z2).he().scale(0.5));
        if let Some(t) = &trig {
            b11 = b11.add_const(&(c.transpose() * t * c));
        }
        if dist_squares {
            let pb = const_part(&p11, "P11") * &params.b1;
            b11 = b11.add_const(&(&pb * pb.transpose()));
        }
    }
    b.set(xi, xi, b11);

    // (xi, xi')
    let b12 = vars
        .q1
        .he()
        .scale(0.5 * hm)
        .add(&vars.n.mul(&params.a_s).t())
        .sub(&vars.xi1.mul(c).t())
        .add(&vars.m2.t());
    b.set(xi, dxi, b12);
    // (xi, xi_tau)
    b.set(xi, xt, vars.q1.sub(&vars.q2).sub(&vars.m1).add(&vars.m3.t()));
    // (xi, e) and (xi', e) in the event-triggered mode
    if !corner.sampled() {
        b.set(xi, e, vars.xi2.scale(-1.0));
        b.set(dxi, e, vars.xi1.scale(-1.0));
    }
    // (xi, mu)
    b.set(xi, mu, p11.mul(&params.w).add(&vars.l.lmul(&z3.transpose()).scale(0.5)));
    // (xi, Delta A)
    b.set(xi, da, p11.clone());

    // (xi', xi')
    let mut b22 = vars.u.scale(hm).sub(&vars.n.he());
    if form == Form::Bmi && dist_squares {
        let nb = const_part(&vars.n, "N") * &params.b1;
        b22 = b22.add_const(&(&nb * nb.transpose()));
    }
    b.set(dxi, dxi, b22);
    // (xi', xi_tau)
    b.set(dxi, xt, vars.q2.sub(&vars.q1).scale(hm).sub(&vars.m2).add(&p12));
    // (xi', mu)
    b.set(dxi, mu, vars.omega.lmul(&z4.transpose()).add(&vars.n.mul(&params.w)));
    // (xi', Delta A)
    b.set(dxi, da, vars.n.clone());

    // (xi_tau, xi_tau)
    b.set(xt, xt, vars.q2.he().sub(&vars.q1.he().scale(0.5)).sub(&vars.m3.he()));

    b.set(e, e, Affine::constant(-params.lambda.clone()));
    b.set(mu, mu, vars.l.scale(-1.0));
    b.set(da, da, scalar_times(&vars.beta1, &eye_m).scale(-1.0));

    if hinf {
        let d = ix(&b, "d");
        let rho = vars.rho.as_ref().expect("H-infinity assembly needs rho");
        b.set(xi, d, p11.mul(&params.b1));
        b.set(dxi, d, vars.n.mul(&params.b1));
        b.set(d, d, scalar_times(rho, &DMatrix::identity(nd, nd)).scale(-1.0));
    }

    if corner.at_h() {
        let nu = ix(&b, "nu");
        let (c17, c27) = if corner.sampled() {
            (vars.xi2.mul(c).sub(&vars.m1).scale(h), vars.xi1.mul(c).sub(&vars.m2).scale(h))
        } else {
            (vars.m1.scale(-h), vars.m2.scale(-h))
        };
        b.set(xi, nu, c17);
        b.set(dxi, nu, c27);
        b.set(xt, nu, vars.m3.scale(-h));
        b.set(nu, nu, vars.u.scale(-h * (-2.0 * params.alpha * h).exp()));
    }

    if lmi {
        if let Some(beta1) = params.beta1 {
            let s = ix(&b, "s_delta");
            if form == Form::LmiScaled {
                b.set(xi, s, Affine::identity(m, params.delta * beta1.sqrt()));
                b.set(s, s, Affine::identity(m, -1.0));
            } else {
                b.set(xi, s, Affine::identity(m, params.delta));
                b.set(s, s, Affine::identity(m, -1.0 / beta1));
            }
        }
        // -(z1^T L z2 + *) / 2 <= (beta2 z1^T L z1 + z2^T L z2 / beta2) / 2
        let s1 = ix(&b, "s_zeta1");
        let s2 = ix(&b, "s_zeta2");
        b.set(xi, s1, vars.l.lmul(&z1.transpose()));
        b.set(xi, s2, vars.l.lmul(&z2.transpose()));
        b.set(s1, s1, vars.l.scale(-2.0 / params.beta2));
        b.set(s2, s2, vars.l.scale(-2.0 * params.beta2));
        if let Some(t) = &trig {
            let s = ix(&b, "s_c");
            if form == Form::LmiScaled {
                let r = t.clone().cholesky().expect("trigger weight is positive definite").l();
                b.set(xi, s, Affine::constant(c.transpose() * r));
                b.set(s, s, Affine::identity(ny, -1.0));
            } else {
                let inv = t.clone().try_inverse().expect("trigger weight is positive definite");
                b.set(xi, s, Affine::constant(c.transpose()));
                b.set(s, s, Affine::constant(-inv));
            }
        }
        if dist_squares {
            let s = ix(&b, "s_p11b1");
            b.set(xi, s, p11.mul(&params.b1));
            b.set(s, s, Affine::identity(nd, -1.0));
            let s = ix(&b, "s_nb1");
            b.set(dxi, s, vars.n.mul(&params.b1));
            b.set(s, s, Affine::identity(nd, -1.0));
        }
    }
    b
}

/// A 1x1 expression times a constant matrix.
fn scalar_times(s: &Affine, m: &DMatrix<f64>) -> Affine {
    Affine {
        constant: m * s.constant[(0, 0)],
        terms: s.terms.iter().map(|(k, a)| (*k, m * a[(0, 0)])).collect(),
    }
}
