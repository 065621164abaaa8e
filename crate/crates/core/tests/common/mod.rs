#![allow(dead_code)]

pub mod gradients;
pub mod oracles;
pub mod structure;

use std::fmt::Display;

/// Outcome of one named check.
#[derive(Debug)]
pub struct Check {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, ok: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ok,
            detail: detail.into(),
        }
    }

    pub fn close(name: impl Into<String>, got: f64, want: f64, tol: f64) -> Self {
        let err = (got - want).abs();
        Self::new(name, err <= tol, format!("got {got:.9} want {want:.9} err {err:.2e} tol {tol:.0e}"))
    }

    pub fn exact(name: impl Into<String>, got: &[f64], want: &[f64]) -> Self {
        let ok = got.len() == want.len() && got.iter().zip(want).all(|(a, b)| a.to_bits() == b.to_bits());
        Self::new(name, ok, format!("got {got:?} want {want:?}"))
    }

    /// A check built from a fallible computation; errors count as failures.
    pub fn from_result<E: Display>(name: impl Into<String>, r: Result<Check, E>) -> Self {
        let name = name.into();
        match r {
            Ok(mut c) => {
                c.name = name;
                c
            }
            Err(e) => Self::new(name, false, format!("error: {e}")),
        }
    }
}

/// Asserts every check passed, listing the failures otherwise.
pub fn assert_all(checks: &[Check]) {
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.ok)
        .map(|c| format!("{}: {}", c.name, c.detail))
        .collect();
    assert!(failed.is_empty(), "failed checks:\n{}", failed.join("\n"));
}
