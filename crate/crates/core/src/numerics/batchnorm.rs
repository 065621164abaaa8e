use serde::{Deserialize, Serialize};

use super::{Graph, Matrix, NodeId};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
/// Weight of the old running statistic in each update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BnMode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(features: usize) -> Self {
        Self {
            mean: vec![0.0; features],
            var: vec![1.0; features],
        }
    }

    pub fn update(&mut self, batch: &BatchStats) {
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Per-column batch normalization of `h` (rows = samples) followed by the
/// affine map `γ ⊙ · + β`, with `γ`, `β` of shape 1×cols.
///
/// Train mode uses batch statistics and returns them; eval mode uses
/// `running`.
pub fn batch_norm(
    g: &mut Graph<'_>,
    h: NodeId,
    gamma: NodeId,
    beta: NodeId,
    mode: BnMode,
    running: &RunningStats,
    eps: f64,
) -> Result<(NodeId, Option<BatchStats>)> {
    let cols = g.shape(h).1;
    if running.mean.len() != cols || running.var.len() != cols {
        return Err(Error::Shape(format!(
            "running stats cover {} features, input has {cols}",
            running.mean.len()
        )));
    }
    let (normed, stats) = match mode {
        BnMode::Train => {
            let (n, mean, var) = g.standardize_cols(h, eps)?;
            (n, Some(BatchStats { mean, var }))
        }
        BnMode::Eval => {
            let neg_mean = g.constant(Matrix::row_vector(
                &running.mean.iter().map(|m| -m).collect::<Vec<_>>(),
            )?);
            let inv_std = g.constant(Matrix::row_vector(
                &running.var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect::<Vec<_>>(),
            )?);
            let centered = g.add_row(h, neg_mean)?;
            (g.mul_row(centered, inv_std)?, None)
        }
    };
    let scaled = g.mul_row(normed, gamma)?;
    Ok((g.add_row(scaled, beta)?, stats))
}
