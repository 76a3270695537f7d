//! Spatial profiles p -> value, built from a small term vocabulary so they can
//! be written in config files, plus a library of the named example profiles.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// One additive term of a profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Term {
    /// coef
    Const { coef: f64 },
    /// coef * sin(freq * p + phase)
    Sin {
        coef: f64,
        freq: f64,
        #[serde(default)]
        phase: f64,
    },
    /// coef * cos(freq * p + phase)
    Cos {
        coef: f64,
        freq: f64,
        #[serde(default)]
        phase: f64,
    },
    /// coef * p^power
    Pow { coef: f64, power: i32 },
}

impl Term {
    pub fn eval(&self, p: f64) -> f64 {
        match *self {
            Term::Const { coef } => coef,
            Term::Sin { coef, freq, phase } => coef * (freq * p + phase).sin(),
            Term::Cos { coef, freq, phase } => coef * (freq * p + phase).cos(),
            Term::Pow { coef, power } => coef * p.powi(power),
        }
    }
}

/// A scalar spatial profile, the sum of its terms.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Profile {
    pub terms: Vec<Term>,
}

impl Profile {
    pub fn new(terms: Vec<Term>) -> Self {
        Profile { terms }
    }

    pub fn zero() -> Self {
        Profile { terms: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        Profile {
            terms: vec![Term::Const { coef: c }],
        }
    }

    pub fn sin(coef: f64, freq: f64) -> Self {
        Profile {
            terms: vec![Term::Sin {
                coef,
                freq,
                phase: 0.0,
            }],
        }
    }

    pub fn eval(&self, p: f64) -> f64 {
        self.terms.iter().map(|t| t.eval(p)).sum()
    }

    /// Returns the value when the profile is a sum of constants only.
    pub fn as_constant(&self) -> Option<f64> {
        let mut c = 0.0;
        for t in &self.terms {
            match t {
                Term::Const { coef } => c += coef,
                Term::Pow { coef, power: 0 } => c += coef,
                _ => return None,
            }
        }
        Some(c)
    }

    pub fn plus(mut self, other: &Profile) -> Profile {
        self.terms.extend(other.terms.iter().cloned());
        self
    }
}

/// Looks up a named profile from the built-in library.
///
/// Names cover the spatial functions of the two worked examples:
/// `example1.c_bar`, `example1.b1`, `example1.b2.0`, `example1.b2.1`,
/// `example1.xi0`, `example2.xi0`, plus `zero` and `mode1` (the first
/// orthonormal sine on [0, pi]).
pub fn builtin(name: &str) -> Option<Profile> {
    let s2p = (2.0 / PI).sqrt();
    let sp2 = (PI / 2.0).sqrt();
    let sin = |coef: f64, freq: f64| Term::Sin {
        coef,
        freq,
        phase: 0.0,
    };
    let cos = |coef: f64, freq: f64| Term::Cos {
        coef,
        freq,
        phase: 0.0,
    };
    let terms = match name {
        "zero" => vec![],
        "mode1" => vec![sin(s2p, 1.0)],
        "example1.c_bar" => vec![sin(s2p, 1.0), cos(0.75 * sp2, 1.0)],
        "example1.b1" => vec![sin(4.0 / PI, 1.0), cos(3.0 * PI / 8.0, 1.0)],
        "example1.b2.0" => vec![cos(-2.25 * s2p, 1.0), sin(-3.0 / PI * s2p, 1.0)],
        "example1.b2.1" => vec![sin(-5.0 / PI * s2p, 1.0)],
        "example1.xi0" => vec![sin(-0.4 * s2p.powi(3), 1.0), cos(-0.075 * s2p, 1.0)],
        "example2.xi0" => vec![Term::Const { coef: 0.1 }, cos(-0.1, 1.0)],
        _ => return None,
    };
    Some(Profile { terms })
}

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: &[&str] = &[
    "zero",
    "mode1",
    "example1.c_bar",
    "example1.b1",
    "example1.b2.0",
    "example1.b2.1",
    "example1.xi0",
    "example2.xi0",
];
