//! Mini-batch training loop shared by every task, plus the imputation and
//! classification harnesses.

use serde::{Deserialize, Serialize};

use super::data::{draw_hidden, ExpressionDataset, Split};
use super::metrics::macro_auc;
use crate::error::{Error, Result};
use crate::model::BfregModel;
use crate::numerics::{adam_step, evaluate_with_gradients, AdamConfig, AdamState, BatchStats, BnMode, Graph, Matrix, NodeId};
use crate::rng::BfRng;

/// Stream indices for the generators derived from a run seed.
pub(crate) const STREAM_BATCHES: u64 = 1;
pub(crate) const STREAM_EVAL: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Probability of hiding each observed entry in imputation inputs.
    pub mask_prob: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 200,
            batch_size: 32,
            mask_prob: 0.6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2 for batch normalization".into()));
        }
        if !(0.0..1.0).contains(&self.mask_prob) {
            return Err(Error::Config(format!("mask probability must lie in [0, 1), got {}", self.mask_prob)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss per epoch.
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    /// Epoch whose parameters were kept, by lowest validation loss.
    pub best_epoch: Option<usize>,
}

impl TrainReport {
    pub fn best_val(&self) -> Option<f64> {
        self.best_epoch.map(|e| self.val_losses[e])
    }
}

/// Loss of one mini-batch; `None` when every sample in it was skipped.
pub(crate) type BatchLoss = Option<(NodeId, Vec<Option<BatchStats>>)>;

/// Shuffled mini-batches; a trailing single sample joins the previous batch.
pub(crate) fn batches(idx: &[usize], size: usize, rng: &mut BfRng) -> Vec<Vec<usize>> {
    let mut order = idx.to_vec();
    rng.shuffle(&mut order);
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(|c| c.to_vec()).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let tail = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(tail);
    }
    out
}

/// Runs `epochs` of Adam over mini-batches of `train`, keeping the parameters
/// of the epoch with the lowest validation loss. When `validate` yields
/// nothing the final parameters are kept.
pub(crate) fn fit<L, V>(
    model: &mut BfregModel,
    cfg: &TrainConfig,
    train: &[usize],
    mut loss: L,
    mut validate: V,
) -> Result<TrainReport>
where
    L: FnMut(&BfregModel, &mut Graph<'_>, &[usize], BnMode, &mut BfRng) -> Result<BatchLoss>,
    V: FnMut(&BfregModel) -> Result<Option<f64>>,
{
    cfg.validate()?;
    let mut report = TrainReport::default();
    if cfg.epochs == 0 {
        return Ok(report);
    }
    if train.len() < 2 && !model.trunk_frozen() {
        return Err(Error::BatchTooSmall(train.len()));
    }
    let mode = if model.trunk_frozen() { BnMode::Eval } else { BnMode::Train };
    let root = BfRng::new(cfg.seed);
    let mut rng = root.derive(STREAM_BATCHES);
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
    let mut best: Option<(f64, BfregModel)> = None;
    for epoch in 0..cfg.epochs {
        let (mut total, mut counted) = (0.0, 0usize);
        for batch in batches(train, cfg.batch_size, &mut rng) {
            let mut stats = Vec::new();
            let mut skipped = false;
            let (value, grads) = evaluate_with_gradients(model.params(), |g| {
                match loss(model, g, &batch, mode, &mut rng)? {
                    Some((root, s)) => {
                        stats = s;
                        Ok(root)
                    }
                    None => {
                        skipped = true;
                        Ok(g.constant(Matrix::zeros(1, 1)))
                    }
                }
            })?;
            if skipped {
                continue;
            }
            let v = value.as_scalar().unwrap_or(f64::NAN);
            if !v.is_finite() || !grads.global_norm().is_finite() {
                return Err(Error::Diverged(format!("epoch {epoch}: loss {v}")));
            }
            adam_step(&mut adam, &grads, model.params_mut())?;
            if mode == BnMode::Train {
                model.update_running(&stats);
            }
            total += v;
            counted += 1;
        }
        let epoch_loss = if counted > 0 { total / counted as f64 } else { f64::NAN };
        report.train_losses.push(epoch_loss);
        if let Some(v) = validate(model)? {
            if !v.is_finite() {
                return Err(Error::Diverged(format!("epoch {epoch}: validation loss {v}")));
            }
            report.val_losses.push(v);
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, model.clone()));
                report.best_epoch = Some(epoch);
            }
        }
        log::debug!("epoch {epoch}: train {epoch_loss:.6}");
    }
    if let Some((_, m)) = best {
        *model = m;
    }
    Ok(report)
}

/// Samples `rows` of `values` as constant n×1 graph inputs.
pub(crate) fn input_columns(g: &mut Graph<'_>, inputs: &[Vec<f64>]) -> Result<Vec<NodeId>> {
    inputs
        .iter()
        .map(|x| Ok(g.constant(Matrix::col_vector(x)?)))
        .collect()
}

/// `Σ weights ⊙ (pred − target)²` as a 1×1 node.
pub(crate) fn weighted_sq_error(g: &mut Graph<'_>, pred: NodeId, target: Matrix, weights: Matrix) -> Result<NodeId> {
    let t = g.constant(target);
    let w = g.constant(weights);
    let diff = g.sub(pred, t)?;
    let sq = g.mul(diff, diff)?;
    let weighted = g.mul(sq, w)?;
    g.sum(weighted)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputationReport {
    pub train: TrainReport,
    pub val_mse: Option<f64>,
    pub test_mse: Option<f64>,
}

/// Fixed evaluation inputs: observed values with a seeded hidden set per sample.
pub struct ImputationProbe {
    pub inputs: Vec<Vec<f64>>,
    /// Entries scored per sample: the hidden ones, or every observed entry
    /// when nothing is hidden.
    pub scored: Vec<Vec<usize>>,
    pub rows: Vec<usize>,
}

impl ImputationProbe {
    pub fn new(data: &ExpressionDataset, rows: &[usize], mask_prob: f64, seed: u64) -> Self {
        let mut rng = BfRng::new(seed).derive(STREAM_EVAL);
        let mut inputs = Vec::with_capacity(rows.len());
        let mut scored = Vec::with_capacity(rows.len());
        for &r in rows {
            let observed = data.mask.row(r);
            let hidden = draw_hidden(observed, mask_prob, &mut rng);
            let mut x: Vec<f64> = data.values.row(r).iter().zip(observed).map(|(v, m)| v * m).collect();
            for &h in &hidden {
                x[h] = 0.0;
            }
            let s = if mask_prob > 0.0 {
                hidden
            } else {
                (0..x.len()).filter(|i| observed[*i] != 0.0).collect()
            };
            inputs.push(x);
            scored.push(s);
        }
        Self {
            inputs,
            scored,
            rows: rows.to_vec(),
        }
    }

    /// Pooled squared error over the scored entries, or `None` if there are none.
    pub fn mse(&self, model: &BfregModel, data: &ExpressionDataset) -> Result<Option<f64>> {
        if self.rows.is_empty() {
            return Ok(None);
        }
        let pred = model.predict(&Matrix::from_rows(&self.inputs)?)?;
        let (mut acc, mut n) = (0.0, 0usize);
        for (k, &r) in self.rows.iter().enumerate() {
            for &i in &self.scored[k] {
                let e = pred.get(k, i) - data.values.get(r, i);
                acc += e * e;
                n += 1;
            }
        }
        Ok((n > 0).then(|| acc / n as f64))
    }
}

/// Trains `model` to reconstruct every observed entry from inputs with a
/// random subset of them hidden. The head must emit one value per gene.
pub fn train_imputation(
    model: &mut BfregModel,
    data: &ExpressionDataset,
    split: &Split,
    cfg: &TrainConfig,
) -> Result<ImputationReport> {
    let n = model.gene_count();
    if data.values.cols() != n || model.config().head_output != n {
        return Err(Error::Shape(format!(
            "imputation needs {n} gene columns and a {n}-wide head, got {} and {}",
            data.values.cols(),
            model.config().head_output
        )));
    }
    let val_probe = ImputationProbe::new(data, &split.validation, cfg.mask_prob, cfg.seed);
    let p = cfg.mask_prob;
    let train = fit(
        model,
        cfg,
        &split.train,
        |m, g, batch, mode, rng| {
            let mut inputs = Vec::new();
            let mut targets = Vec::new();
            let mut weights = Vec::new();
            for &r in batch {
                let observed = data.mask.row(r);
                let count = observed.iter().filter(|v| **v != 0.0).count();
                if count == 0 {
                    log::warn!("sample {r} has no observed entries; skipped");
                    continue;
                }
                let hidden = draw_hidden(observed, p, rng);
                let mut x: Vec<f64> = data.values.row(r).iter().zip(observed).map(|(v, o)| v * o).collect();
                for &h in &hidden {
                    x[h] = 0.0;
                }
                inputs.push(x);
                targets.push(data.values.row(r).to_vec());
                weights.push(observed.iter().map(|o| o / count as f64).collect::<Vec<_>>());
            }
            if inputs.len() < 2 && mode == BnMode::Train {
                return Ok(None);
            }
            let b = inputs.len() as f64;
            let xs = input_columns(g, &inputs)?;
            let trunk = m.trunk(g, &xs, mode)?;
            let pred = m.head(g, &trunk)?;
            let w = Matrix::from_rows(&weights)?.scale(1.0 / b)?;
            let loss = weighted_sq_error(g, pred, Matrix::from_rows(&targets)?, w)?;
            Ok(Some((loss, trunk.stats)))
        },
        |m| val_probe.mse(m, data),
    )?;
    let val_mse = val_probe.mse(model, data)?;
    let test_probe = ImputationProbe::new(data, &split.test, cfg.mask_prob, cfg.seed.wrapping_add(1));
    let test_mse = test_probe.mse(model, data)?;
    Ok(ImputationReport {
        train,
        val_mse,
        test_mse,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub train: TrainReport,
    pub train_auc: f64,
    pub test_auc: Option<f64>,
}

fn cross_entropy(model: &BfregModel, g: &mut Graph<'_>, inputs: &[Vec<f64>], labels: &[usize], mode: BnMode) -> Result<(NodeId, Vec<Option<BatchStats>>)> {
    let k = model.config().head_output;
    let xs = input_columns(g, inputs)?;
    let trunk = model.trunk(g, &xs, mode)?;
    let logits = model.head(g, &trunk)?;
    let logp = g.log_softmax_rows(logits)?;
    let b = labels.len() as f64;
    let onehot = Matrix::from_fn(labels.len(), k, |r, c| if labels[r] == c { -1.0 / b } else { 0.0 })?;
    let w = g.constant(onehot);
    let picked = g.mul(logp, w)?;
    Ok((g.sum(picked)?, trunk.stats))
}

/// Softmax class probabilities for rows of `inputs`.
pub fn class_probabilities(model: &BfregModel, inputs: &Matrix) -> Result<Matrix> {
    let logits = model.predict(inputs)?;
    let mut out = logits.clone();
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        for (c, v) in row.iter().enumerate() {
            out.set(r, c, (v - m).exp() / z);
        }
    }
    Ok(out)
}

/// Cross-entropy training with macro AUC on the held-out split.
pub fn train_classification(
    model: &mut BfregModel,
    data: &ExpressionDataset,
    split: &Split,
    cfg: &TrainConfig,
) -> Result<ClassificationReport> {
    let labels = data
        .labels
        .as_ref()
        .ok_or_else(|| Error::invalid("classification needs labels"))?;
    let k = model.config().head_output;
    let present: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    if present.len() < 2 {
        return Err(Error::invalid("macro AUC needs at least two classes present"));
    }
    if let Some(bad) = labels.iter().find(|l| **l >= k) {
        return Err(Error::invalid(format!("label {bad} outside the head's {k} classes")));
    }
    let observed = |r: usize| -> Vec<f64> { data.values.row(r).iter().zip(data.mask.row(r)).map(|(v, m)| v * m).collect() };
    let val_inputs: Vec<Vec<f64>> = split.validation.iter().map(|r| observed(*r)).collect();
    let val_labels: Vec<usize> = split.validation.iter().map(|r| labels[*r]).collect();
    let train = fit(
        model,
        cfg,
        &split.train,
        |m, g, batch, mode, _| {
            let inputs: Vec<Vec<f64>> = batch.iter().map(|r| observed(*r)).collect();
            let ls: Vec<usize> = batch.iter().map(|r| labels[*r]).collect();
            Ok(Some(cross_entropy(m, g, &inputs, &ls, mode)?))
        },
        |m| {
            if val_inputs.is_empty() {
                return Ok(None);
            }
            let v = crate::numerics::evaluate(m.params(), |g| Ok(cross_entropy(m, g, &val_inputs, &val_labels, BnMode::Eval)?.0))?;
            Ok(v.as_scalar())
        },
    )?;
    let auc_on = |rows: &[usize]| -> Result<Option<f64>> {
        let ls: Vec<usize> = rows.iter().map(|r| labels[*r]).collect();
        let distinct: std::collections::BTreeSet<usize> = ls.iter().copied().collect();
        if distinct.len() < k {
            log::warn!("held-out rows cover {} of {k} classes; AUC skipped", distinct.len());
            return Ok(None);
        }
        let inputs = Matrix::from_rows(&rows.iter().map(|r| observed(*r)).collect::<Vec<_>>())?;
        Ok(Some(macro_auc(&class_probabilities(model, &inputs)?, &ls)?))
    };
    let train_auc = auc_on(&split.train)?.ok_or_else(|| Error::invalid("training rows must cover every class"))?;
    let test_auc = auc_on(&split.test)?;
    Ok(ClassificationReport {
        train,
        train_auc,
        test_auc,
    })
}
