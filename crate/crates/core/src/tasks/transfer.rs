//! Head-only fine-tuning of a pre-trained network, and validation-driven
//! choice of the damping value α.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::BfregModel;
use crate::rng::BfRng;

/// The damping values tried when α is selected automatically.
pub const ALPHA_GRID: [f64; 7] = [0.0, 1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3];

/// Copies `pretrained`, swaps in a fresh head, freezes everything else and
/// hands the model to `train`. Fails if the trunk changed during training.
pub fn pretrain_finetune<R>(
    pretrained: &BfregModel,
    head_hidden: Vec<usize>,
    head_output: usize,
    rng: &mut BfRng,
    train: impl FnOnce(&mut BfregModel) -> Result<R>,
) -> Result<(BfregModel, R)> {
    let mut model = pretrained.clone();
    model.replace_head(head_hidden, head_output, rng)?;
    model.freeze_trunk();
    let before = model.trunk_hash();
    let out = train(&mut model)?;
    if model.trunk_hash() != before {
        return Err(Error::invalid("frozen trunk parameters changed during fine-tuning"));
    }
    Ok((model, out))
}

#[derive(Clone, Debug)]
pub struct AlphaSelection<T> {
    pub alpha: f64,
    pub val_loss: f64,
    pub result: T,
    /// Validation loss per grid value; `None` for runs that failed.
    pub trials: Vec<(f64, Option<f64>)>,
}

/// Runs `run(α)` for each grid value (in parallel) and keeps the one with the
/// smallest validation loss; ties go to the earlier grid entry.
pub fn select_alpha<T, F>(grid: &[f64], run: F) -> Result<AlphaSelection<T>>
where
    T: Send,
    F: Fn(f64) -> Result<(f64, T)> + Sync,
{
    if grid.is_empty() {
        return Err(Error::invalid("empty alpha grid"));
    }
    let results: Vec<Result<(f64, T)>> = grid.par_iter().map(|a| run(*a)).collect();
    let mut trials = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64, T)> = None;
    for (a, r) in grid.iter().zip(results) {
        match r {
            Ok((v, t)) if v.is_finite() => {
                trials.push((*a, Some(v)));
                if best.as_ref().is_none_or(|(_, bv, _)| v < *bv) {
                    best = Some((*a, v, t));
                }
            }
            Ok((v, _)) => {
                log::warn!("alpha {a}: non-finite validation loss {v}");
                trials.push((*a, None));
            }
            Err(e) => {
                log::warn!("alpha {a}: {e}");
                trials.push((*a, None));
            }
        }
    }
    let (alpha, val_loss, result) = best.ok_or_else(|| Error::Diverged("every alpha in the grid failed".into()))?;
    Ok(AlphaSelection {
        alpha,
        val_loss,
        result,
        trials,
    })
}
