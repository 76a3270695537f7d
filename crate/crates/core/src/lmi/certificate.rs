//! Controller certificates: storage, exact matrix-inequality checks and
//! the ultimate bound.

use super::affine::{Affine, BlockSym};
use super::assembly::{assemble, assemble_xi_tilde, q_matrix, AssemblyError, Corner, Form, Mode, PhiVars, SynthesisParams};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub newton_steps: usize,
    /// Index into the (beta_1, Lambda) adjustment grid; 0 means nominal.
    pub adjustments: usize,
}

/// Every decision variable of a solved instance plus the gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerCertificate {
    pub p: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub q1: DMatrix<f64>,
    pub q2: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub m1: DMatrix<f64>,
    pub m2: DMatrix<f64>,
    pub m3: DMatrix<f64>,
    pub n: DMatrix<f64>,
    pub beta1: f64,
    /// gamma^2 for H-infinity certificates.
    pub rho: Option<f64>,
    /// N = r P11 ratio used for the gain, when the substitution produced it.
    pub r: Option<DMatrix<f64>>,
    pub xi2: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub params: SynthesisParams,
    pub slack: Option<CertificateReport>,
    pub provenance: Provenance,
}

impl ControllerCertificate {
    pub fn m(&self) -> usize {
        self.params.m()
    }

    pub fn p11(&self) -> DMatrix<f64> {
        let m = self.m();
        self.p.view((0, 0), (m, m)).into_owned()
    }

    /// Constant expressions for the exact (bilinear) matrices. The gain
    /// blocks are rebuilt from K.
    pub fn phi_vars(&self) -> PhiVars {
        let c = |m: &DMatrix<f64>| Affine::constant(m.clone());
        let bk = &self.params.b2 * &self.k;
        PhiVars {
            p: c(&self.p),
            u: c(&self.u),
            q1: c(&self.q1),
            q2: c(&self.q2),
            omega: c(&self.omega),
            l: c(&self.l),
            m1: c(&self.m1),
            m2: c(&self.m2),
            m3: c(&self.m3),
            n: c(&self.n),
            xi1: c(&(&self.n * &bk)),
            xi2: c(&(self.p11() * &bk)),
            beta1: c(&DMatrix::from_element(1, 1, self.beta1)),
            rho: self.rho.map(|r| c(&DMatrix::from_element(1, 1, r))),
        }
    }

    /// All zero blocks with the dimensions of `params`.
    pub fn zeros(params: &SynthesisParams) -> Self {
        let m = params.m();
        let nh = params.n_h();
        let z = |r, c| DMatrix::zeros(r, c);
        ControllerCertificate {
            p: z(2 * m, 2 * m),
            u: z(m, m),
            q1: z(m, m),
            q2: z(m, m),
            omega: z(nh, nh),
            l: z(nh, nh),
            m1: z(m, m),
            m2: z(m, m),
            m3: z(m, m),
            n: z(m, m),
            beta1: 0.0,
            rho: None,
            r: None,
            xi2: z(m, params.n_y()),
            k: z(params.n_u(), params.n_y()),
            params: params.clone(),
            slack: None,
            provenance: Provenance::default(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, String> {
        serde_json::from_str(s).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// Smallest eigenvalue must exceed the margin.
    PosDef,
    /// Largest eigenvalue must be below -margin.
    NegDef,
    /// Residual must be below the tolerance.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub kind: CheckKind,
    /// lambda_min, lambda_max or the residual.
    pub value: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub mode: Mode,
    pub margin: f64,
    pub checks: Vec<Check>,
}

impl CertificateReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn summary(&self) -> String {
        let f = self.failures();
        if f.is_empty() {
            return format!("all {} checks pass", self.checks.len());
        }
        f.iter().map(|c| format!("{} ({:.3e})", c.name, c.value)).collect::<Vec<_>>().join(", ")
    }
}

fn sym_eigs(m: &DMatrix<f64>) -> DVector<f64> {
    ((m + m.transpose()) * 0.5).symmetric_eigenvalues()
}

fn off_diagonal_max(m: &DMatrix<f64>) -> f64 {
    let mut w = m.clone();
    w.fill_diagonal(0.0);
    w.amax()
}

fn which_corner(which: usize, range: std::ops::RangeInclusive<usize>) -> Result<Corner, AssemblyError> {
    if !range.contains(&which) {
        return Err(AssemblyError::Invalid(format!("matrix index {which} outside {range:?}")));
    }
    Ok(Corner::from_index(which + 1 - range.start()).unwrap())
}

fn check_dims(params: &SynthesisParams, cert: &ControllerCertificate) -> Result<(), AssemblyError> {
    let m = params.m();
    let nh = params.n_h();
    let sq = |a: &DMatrix<f64>, n: usize| a.nrows() == n && a.ncols() == n;
    let ok = sq(&cert.p, 2 * m)
        && [&cert.u, &cert.q1, &cert.q2, &cert.m1, &cert.m2, &cert.m3, &cert.n].iter().all(|a| sq(a, m))
        && sq(&cert.omega, nh)
        && sq(&cert.l, nh)
        && cert.k.nrows() == params.n_u()
        && cert.k.ncols() == params.n_y();
    if ok {
        Ok(())
    } else {
        Err(AssemblyError::Dimension("certificate blocks do not match the parameters".into()))
    }
}

fn dense(b: BlockSym) -> DMatrix<f64> {
    b.eval(&DVector::zeros(0))
}

/// Phi_1..Phi_4 with the certificate's variables and its gain.
pub fn assemble_bmi_phi(which: usize, params: &SynthesisParams, cert: &ControllerCertificate) -> Result<DMatrix<f64>, AssemblyError> {
    params.validate()?;
    check_dims(params, cert)?;
    let c = which_corner(which, 1..=4)?;
    Ok(dense(assemble(params, &cert.phi_vars(), c, Mode::Stability, Form::Bmi)))
}

/// Relaxed Phi~_1..Phi~_4 at given (possibly symbolic) variables.
pub fn assemble_lmi_phi_tilde(which: usize, params: &SynthesisParams, vars: &PhiVars) -> Result<BlockSym, AssemblyError> {
    params.validate()?;
    let c = which_corner(which, 1..=4)?;
    Ok(assemble(params, vars, c, Mode::Stability, Form::Lmi))
}

/// Disturbance-free Phi^_1..Phi^_4.
pub fn assemble_disturbance_free(which: usize, params: &SynthesisParams, cert: &ControllerCertificate) -> Result<DMatrix<f64>, AssemblyError> {
    params.validate()?;
    check_dims(params, cert)?;
    let c = which_corner(which, 1..=4)?;
    Ok(dense(assemble(params, &cert.phi_vars(), c, Mode::NoDisturbance, Form::Bmi)))
}

/// H-infinity Phi_5..Phi_8 at attenuation level gamma.
pub fn assemble_hinf(which: usize, params: &SynthesisParams, cert: &ControllerCertificate, gamma: f64) -> Result<DMatrix<f64>, AssemblyError> {
    params.validate()?;
    check_dims(params, cert)?;
    if !(gamma > 0.0) {
        return Err(AssemblyError::Invalid("gamma must be positive".into()));
    }
    let c = which_corner(which, 5..=8)?;
    let mut v = cert.phi_vars();
    v.rho = Some(Affine::constant(DMatrix::from_element(1, 1, gamma * gamma)));
    Ok(dense(assemble(params, &v, c, Mode::Hinf, Form::Bmi)))
}

/// Exact checks of every inequality of the certificate.
pub fn verify_certificate(cert: &ControllerCertificate, mode: Mode, margin: f64) -> CertificateReport {
    let params = &cert.params;
    let mut checks: Vec<Check> = vec![];
    let push = |checks: &mut Vec<Check>, name: &str, kind: CheckKind, value: f64, tol: f64| {
        let passed = match kind {
            CheckKind::PosDef => value > tol,
            CheckKind::NegDef => value < -tol,
            CheckKind::Identity => value.abs() < tol,
        };
        checks.push(Check { name: name.to_string(), kind, value, passed });
    };
    if let Err(e) = params.validate().and_then(|_| check_dims(params, cert)) {
        push(&mut checks, &format!("parameters: {e}"), CheckKind::Identity, f64::INFINITY, 0.0);
        return CertificateReport { mode, margin, checks };
    }
    let lmin = |m: &DMatrix<f64>| sym_eigs(m).min();
    push(&mut checks, "P", CheckKind::PosDef, lmin(&cert.p), margin);
    if !checks[0].passed {
        // nothing else is meaningful without P > 0
        return CertificateReport { mode, margin, checks };
    }
    push(&mut checks, "U", CheckKind::PosDef, lmin(&cert.u), margin);
    push(&mut checks, "L", CheckKind::PosDef, lmin(&cert.l), margin);
    push(&mut checks, "L diagonal", CheckKind::Identity, off_diagonal_max(&cert.l), 1e-12);
    push(&mut checks, "Omega", CheckKind::PosDef, lmin(&cert.omega), margin);
    push(&mut checks, "Omega diagonal", CheckKind::Identity, off_diagonal_max(&cert.omega), 1e-12);
    push(&mut checks, "beta1", CheckKind::PosDef, cert.beta1, 0.0);
    let vars = cert.phi_vars();
    push(&mut checks, "Xi~", CheckKind::PosDef, lmin(&dense(assemble_xi_tilde(&vars, params.h))), margin);
    let gain_res = (cert.p11() * &params.b2 * &cert.k - &cert.xi2).amax();
    push(&mut checks, "gain identity", CheckKind::Identity, gain_res, 1e-8 * (1.0 + cert.xi2.amax()));
    let mut vars = vars;
    if mode == Mode::Hinf {
        match cert.rho {
            Some(r) if r > 0.0 => vars.rho = Some(Affine::constant(DMatrix::from_element(1, 1, r))),
            _ => {
                push(&mut checks, "rho", CheckKind::PosDef, cert.rho.unwrap_or(f64::NAN), 0.0);
                return CertificateReport { mode, margin, checks };
            }
        }
    }
    for c in Corner::ALL {
        let name = super::synthesis::corner_name(c, mode);
        let phi = dense(assemble(params, &vars, c, mode, Form::Bmi));
        push(&mut checks, &name, CheckKind::NegDef, sym_eigs(&phi).max(), margin);
    }
    CertificateReport { mode, margin, checks }
}

/// Constants of the ultimate-bound estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub alpha1: f64,
    pub alpha4: f64,
    pub alpha2: f64,
    pub alpha5: f64,
    pub alpha3_upper: f64,
    pub alpha3_lower: f64,
    pub alpha6_bar: f64,
    /// Decay rate of V.
    pub alpha5_bar: f64,
}

/// Constants of the bound from a verified stability certificate.
pub fn bound_constants(cert: &ControllerCertificate) -> Result<BoundConstants, String> {
    let report = verify_certificate(cert, Mode::Stability, 0.0);
    if !report.passed() {
        return Err(format!("certificate does not verify: {}", report.summary()));
    }
    let params = &cert.params;
    let half_max = |which| -> f64 { 0.5 * sym_eigs(&assemble_bmi_phi(which, params, cert).unwrap()).max().abs() };
    let alpha1 = half_max(2);
    let alpha4 = half_max(4);
    let q = q_matrix(&cert.q1, &cert.q2);
    let (ep, eq, eu) = (sym_eigs(&cert.p), sym_eigs(&q), sym_eigs(&cert.u));
    let alpha2 = ep.max().max(eq.max()).max(eu.max());
    // lower quadratic bound uses Xi~ (Q alone need not be definite)
    let xt = dense(assemble_xi_tilde(&cert.phi_vars(), params.h));
    let alpha5 = ep.min().min(sym_eigs(&xt).min()).min(eu.min());
    let mut alpha3_upper = 0.0;
    for i in 0..params.n_h() {
        let g = params.g_max[i] - params.g_min[i];
        alpha3_upper += cert.omega[(i, i)] * params.g_max[i] * g * params.v.row(i).norm_squared();
    }
    let alpha3_lower = 0.0;
    let alpha4_bar = alpha1.min(alpha4);
    let alpha5_bar = alpha4_bar / (alpha2 + alpha3_upper);
    let alpha6_bar = alpha5_bar * (alpha5 + alpha3_lower);
    Ok(BoundConstants { alpha1, alpha4, alpha2, alpha5, alpha3_upper, alpha3_lower, alpha6_bar, alpha5_bar })
}

/// sqrt(2 / alpha6_bar) * D1.
pub fn ultimate_bound(cert: &ControllerCertificate, d1: f64) -> Result<f64, String> {
    if !(d1 >= 0.0) {
        return Err("D1 must be non-negative".into());
    }
    let k = bound_constants(cert)?;
    if !(k.alpha6_bar > 0.0) {
        return Err(format!("non-positive alpha6_bar {:.3e}", k.alpha6_bar));
    }
    Ok((2.0 / k.alpha6_bar).sqrt() * d1)
}
