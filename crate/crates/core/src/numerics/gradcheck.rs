use super::{evaluate, evaluate_with_gradients, Graph, NodeId, ParamStore};
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct FdConfig {
    /// Central-difference step.
    pub h: f64,
    /// Pass threshold on the relative error.
    pub tol: f64,
    /// Lower bound on the relative-error denominator, so gradients that are
    /// essentially zero are compared in absolute terms.
    pub floor: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tol: 1e-5,
            floor: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FdEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct FdReport {
    pub entries: Vec<FdEntry>,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.max_rel_err))
    }

    pub fn worst(&self) -> Option<&FdEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// Compares analytic gradients against `(f(θ+h) − f(θ−h)) / 2h` for every
/// entry of every trainable parameter.
///
/// Relative error is `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
pub fn finite_difference_check<F>(store: &ParamStore, build: F, cfg: FdConfig) -> Result<FdReport>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId>,
{
    let (_, grads) = evaluate_with_gradients(store, &build)?;
    let mut work = store.clone();
    let names: Vec<String> = store.trainable_names().map(str::to_string).collect();
    let mut entries = Vec::with_capacity(names.len());
    for name in names {
        let analytic = grads.get(&name).expect("every trainable name has a gradient").clone();
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        for k in 0..analytic.len() {
            let orig = store.get(&name)?.data()[k];
            work.get_mut(&name).unwrap().value.data_mut()[k] = orig + cfg.h;
            let plus = scalar(&work, &build)?;
            work.get_mut(&name).unwrap().value.data_mut()[k] = orig - cfg.h;
            let minus = scalar(&work, &build)?;
            work.get_mut(&name).unwrap().value.data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.h);
            let a = analytic.data()[k];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(cfg.floor);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(rel);
        }
        entries.push(FdEntry {
            passed: max_rel < cfg.tol,
            name,
            max_rel_err: max_rel,
            max_abs_err: max_abs,
        });
    }
    Ok(FdReport { entries })
}

fn scalar<F>(store: &ParamStore, build: &F) -> Result<f64>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId>,
{
    let v = evaluate(store, build)?;
    v.as_scalar()
        .ok_or(crate::error::Error::NonScalarLoss(v.rows(), v.cols()))
}
