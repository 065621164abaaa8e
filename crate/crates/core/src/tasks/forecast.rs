//! Future-value forecasting: a head that emits every horizon step at once,
//! and a gated recurrent cell fed by the network's embeddings step by step.

use serde::{Deserialize, Serialize};

use super::data::{FrameSet, Split};
use super::metrics::{mean_series_pcc, mse};
use super::train::{fit, input_columns, weighted_sq_error, TrainConfig, TrainReport};
use crate::error::{Error, Result};
use crate::model::BfregModel;
use crate::numerics::{evaluate, BatchStats, BnMode, Graph, Matrix, NodeId};
use crate::rng::BfRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub train: TrainReport,
    pub mse: f64,
    pub pcc: Option<f64>,
    /// MSE of repeating the starting value over the horizon, same windows.
    pub baseline_mse: f64,
}

/// (series, start) pairs whose horizon fits in the recorded frames.
pub fn windows(frames: &FrameSet, series: &[usize], horizon: usize) -> Result<Vec<(usize, usize)>> {
    if horizon == 0 {
        return Err(Error::invalid("forecast horizon must be at least 1"));
    }
    if frames.series_count().is_none() {
        return Err(Error::invalid("forecasting needs every frame to hold the same series"));
    }
    if frames.len() < horizon + 1 {
        return Err(Error::invalid(format!(
            "horizon {horizon} needs at least {} frames, have {}",
            horizon + 1,
            frames.len()
        )));
    }
    Ok(series
        .iter()
        .flat_map(|s| (0..frames.len() - horizon).map(move |t| (*s, t)))
        .collect())
}

fn target_row(frames: &FrameSet, (s, t): (usize, usize), horizon: usize) -> Vec<f64> {
    (1..=horizon).flat_map(|k| frames.frames[t + k].row(s).to_vec()).collect()
}

/// Prediction quality over `wins`: pooled MSE, per-series correlation and the
/// carried-forward baseline.
fn score(frames: &FrameSet, wins: &[(usize, usize)], preds: &[Vec<f64>], horizon: usize) -> Result<(f64, Option<f64>, f64)> {
    let mut all_p = Vec::new();
    let mut all_t = Vec::new();
    let mut all_b = Vec::new();
    let mut per_series: std::collections::BTreeMap<usize, (Vec<f64>, Vec<f64>)> = Default::default();
    for (w, p) in wins.iter().zip(preds) {
        let t = target_row(frames, *w, horizon);
        let start = frames.frames[w.1].row(w.0);
        all_b.extend((0..horizon).flat_map(|_| start.iter().copied()));
        let e = per_series.entry(w.0).or_default();
        e.0.extend(p.iter().copied());
        e.1.extend(t.iter().copied());
        all_p.extend(p.iter().copied());
        all_t.extend(t);
    }
    let (ps, ts): (Vec<Vec<f64>>, Vec<Vec<f64>>) = per_series.into_values().unzip();
    Ok((mse(&all_p, &all_t)?, mean_series_pcc(&ps, &ts).ok(), mse(&all_b, &all_t)?))
}

/// MSE of carrying the starting value forward over the horizon.
pub fn last_value_mse(frames: &FrameSet, series: &[usize], horizon: usize) -> Result<f64> {
    let wins = windows(frames, series, horizon)?;
    let preds: Vec<Vec<f64>> = wins
        .iter()
        .map(|(s, t)| (0..horizon).flat_map(|_| frames.frames[*t].row(*s).to_vec()).collect())
        .collect();
    Ok(score(frames, &wins, &preds, horizon)?.2)
}

/// Trains a head of width n·horizon to emit all future steps from the start value.
pub fn train_forecast_simultaneous(
    model: &mut BfregModel,
    frames: &FrameSet,
    split: &Split,
    horizon: usize,
    cfg: &TrainConfig,
) -> Result<ForecastReport> {
    let n = model.gene_count();
    if model.config().head_output != n * horizon {
        return Err(Error::Shape(format!(
            "simultaneous forecasting needs a head of width {}, got {}",
            n * horizon,
            model.config().head_output
        )));
    }
    let train_w = windows(frames, &split.train, horizon)?;
    let val_w = windows(frames, &split.validation, horizon)?;
    let test_w = windows(frames, &split.test, horizon)?;
    let start = |w: &(usize, usize)| frames.frames[w.1].row(w.0).to_vec();
    let predict = |m: &BfregModel, wins: &[(usize, usize)]| -> Result<Vec<Vec<f64>>> {
        let out = m.predict(&Matrix::from_rows(&wins.iter().map(start).collect::<Vec<_>>())?)?;
        Ok((0..out.rows()).map(|r| out.row(r).to_vec()).collect())
    };
    let idx: Vec<usize> = (0..train_w.len()).collect();
    let train = fit(
        model,
        cfg,
        &idx,
        |m, g, batch, mode, _| {
            let inputs: Vec<Vec<f64>> = batch.iter().map(|i| start(&train_w[*i])).collect();
            let targets: Vec<Vec<f64>> = batch.iter().map(|i| target_row(frames, train_w[*i], horizon)).collect();
            let xs = input_columns(g, &inputs)?;
            let trunk = m.trunk(g, &xs, mode)?;
            let pred = m.head(g, &trunk)?;
            let w = Matrix::filled(batch.len(), n * horizon, 1.0 / (batch.len() * n * horizon) as f64);
            let loss = weighted_sq_error(g, pred, Matrix::from_rows(&targets)?, w)?;
            Ok(Some((loss, trunk.stats)))
        },
        |m| {
            if val_w.is_empty() {
                return Ok(None);
            }
            let p = predict(m, &val_w)?;
            Ok(Some(score(frames, &val_w, &p, horizon)?.0))
        },
    )?;
    if test_w.is_empty() {
        return Err(Error::invalid("no held-out series to evaluate"));
    }
    let preds = predict(model, &test_w)?;
    let (m, p, b) = score(frames, &test_w, &preds, horizon)?;
    Ok(ForecastReport {
        train,
        mse: m,
        pcc: p,
        baseline_mse: b,
    })
}

/// Lives under the head prefix so fine-tuning treats it as head.
pub const RNN_PREFIX: &str = "head.rnn";

/// Gate weights of the recurrent cell; hidden width H, input width W.
#[derive(Clone, Copy, Debug)]
pub struct LstmCell {
    /// W × 4H, gate blocks ordered input, forget, output, candidate.
    pub wx: NodeId,
    /// H × 4H.
    pub wh: NodeId,
    /// 1 × 4H.
    pub b: NodeId,
}

impl LstmCell {
    pub fn bind(g: &mut Graph<'_>, prefix: &str) -> Result<Self> {
        Ok(Self {
            wx: g.param(&format!("{prefix}.wx"))?,
            wh: g.param(&format!("{prefix}.wh"))?,
            b: g.param(&format!("{prefix}.b"))?,
        })
    }

    /// One step on B rows: returns the new (hidden, cell) states.
    pub fn step(&self, g: &mut Graph<'_>, x: NodeId, h: NodeId, c: NodeId) -> Result<(NodeId, NodeId)> {
        let hidden = g.shape(h).1;
        let zx = g.matmul(x, self.wx)?;
        let zh = g.matmul(h, self.wh)?;
        let z = g.add(zx, zh)?;
        let z = g.add_row(z, self.b)?;
        let gate = |g: &mut Graph<'_>, k: usize| g.slice_cols(z, k * hidden, hidden);
        let i = gate(g, 0)?;
        let i = g.sigmoid(i)?;
        let f = gate(g, 1)?;
        let f = g.sigmoid(f)?;
        let o = gate(g, 2)?;
        let o = g.sigmoid(o)?;
        let cand = gate(g, 3)?;
        let cand = g.tanh(cand)?;
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_next = g.add(keep, write)?;
        let squashed = g.tanh(c_next)?;
        let h_next = g.mul(o, squashed)?;
        Ok((h_next, c_next))
    }
}

/// Adds the recurrent cell and its readout to the model's head parameters.
pub fn init_recurrent(model: &mut BfregModel, hidden: usize, rng: &mut BfRng) -> Result<()> {
    if hidden == 0 {
        return Err(Error::Config("recurrent hidden size must be positive".into()));
    }
    let width = model.config().d * model.kb().level(*model.included_levels().last().expect("levels")).len();
    let n = model.gene_count();
    let p = model.params_mut();
    p.insert_uniform(format!("{RNN_PREFIX}.wx"), width, 4 * hidden, width, rng)?;
    p.insert_uniform(format!("{RNN_PREFIX}.wh"), hidden, 4 * hidden, hidden, rng)?;
    p.insert_uniform(format!("{RNN_PREFIX}.b"), 1, 4 * hidden, hidden, rng)?;
    p.insert_uniform(format!("{RNN_PREFIX}.out.w"), hidden, n, hidden, rng)?;
    p.insert_uniform(format!("{RNN_PREFIX}.out.b"), 1, n, hidden, rng)?;
    Ok(())
}

/// Rolls the cell over `horizon` steps. With `teacher` given, step k reads
/// the true value at k − 1; otherwise it reads its own previous prediction.
/// Returns B × (n·horizon) predictions and the first step's batch statistics.
fn roll(
    model: &BfregModel,
    g: &mut Graph<'_>,
    starts: &[Vec<f64>],
    teacher: Option<&[Vec<Vec<f64>>]>,
    horizon: usize,
    mode: BnMode,
) -> Result<(NodeId, Vec<Option<BatchStats>>)> {
    let cell = LstmCell::bind(g, RNN_PREFIX)?;
    let out_w = g.param(&format!("{RNN_PREFIX}.out.w"))?;
    let out_b = g.param(&format!("{RNN_PREFIX}.out.b"))?;
    let hidden = g.shape(cell.wh).0;
    let b = starts.len();
    let n = model.gene_count();
    let mut h = g.constant(Matrix::zeros(b, hidden));
    let mut c = g.constant(Matrix::zeros(b, hidden));
    let mut inputs = input_columns(g, starts)?;
    let mut outs = Vec::with_capacity(horizon);
    let mut first_stats = None;
    for k in 0..horizon {
        let trunk = model.trunk(g, &inputs, mode)?;
        if first_stats.is_none() {
            first_stats = Some(trunk.stats.clone());
        }
        let e = model.flatten(g, &trunk)?;
        (h, c) = cell.step(g, e, h, c)?;
        let y = g.matmul(h, out_w)?;
        let y = g.add_row(y, out_b)?;
        outs.push(y);
        if k + 1 < horizon {
            inputs = match teacher {
                Some(t) => input_columns(g, &t.iter().map(|rows| rows[k].clone()).collect::<Vec<_>>())?,
                None => (0..b)
                    .map(|r| {
                        let row = g.slice_rows(y, r, 1)?;
                        g.reshape(row, n, 1)
                    })
                    .collect::<Result<_>>()?,
            };
        }
    }
    Ok((g.hconcat(&outs)?, first_stats.unwrap_or_default()))
}

/// Teacher-forced training of the recurrent forecaster; evaluation runs free.
pub fn train_forecast_recurrent(
    model: &mut BfregModel,
    frames: &FrameSet,
    split: &Split,
    horizon: usize,
    cfg: &TrainConfig,
) -> Result<ForecastReport> {
    if !model.params().contains(&format!("{RNN_PREFIX}.wx")) {
        return Err(Error::invalid("model has no recurrent cell; call init_recurrent first"));
    }
    let n = model.gene_count();
    let train_w = windows(frames, &split.train, horizon)?;
    let val_w = windows(frames, &split.validation, horizon)?;
    let test_w = windows(frames, &split.test, horizon)?;
    let start = |w: &(usize, usize)| frames.frames[w.1].row(w.0).to_vec();
    let predict = |m: &BfregModel, wins: &[(usize, usize)]| -> Result<Vec<Vec<f64>>> {
        let starts: Vec<Vec<f64>> = wins.iter().map(start).collect();
        let out = evaluate(m.params(), |g| Ok(roll(m, g, &starts, None, horizon, BnMode::Eval)?.0))?;
        Ok((0..out.rows()).map(|r| out.row(r).to_vec()).collect())
    };
    let idx: Vec<usize> = (0..train_w.len()).collect();
    let train = fit(
        model,
        cfg,
        &idx,
        |m, g, batch, mode, _| {
            let wins: Vec<(usize, usize)> = batch.iter().map(|i| train_w[*i]).collect();
            let starts: Vec<Vec<f64>> = wins.iter().map(start).collect();
            let teacher: Vec<Vec<Vec<f64>>> = wins
                .iter()
                .map(|(s, t)| (1..horizon).map(|k| frames.frames[t + k].row(*s).to_vec()).collect())
                .collect();
            let (pred, stats) = roll(m, g, &starts, Some(&teacher), horizon, mode)?;
            let targets: Vec<Vec<f64>> = wins.iter().map(|w| target_row(frames, *w, horizon)).collect();
            let w = Matrix::filled(batch.len(), n * horizon, 1.0 / (batch.len() * n * horizon) as f64);
            let loss = weighted_sq_error(g, pred, Matrix::from_rows(&targets)?, w)?;
            Ok(Some((loss, stats)))
        },
        |m| {
            if val_w.is_empty() {
                return Ok(None);
            }
            let p = predict(m, &val_w)?;
            Ok(Some(score(frames, &val_w, &p, horizon)?.0))
        },
    )?;
    if test_w.is_empty() {
        return Err(Error::invalid("no held-out series to evaluate"));
    }
    let preds = predict(model, &test_w)?;
    let (m, p, b) = score(frames, &test_w, &preds, horizon)?;
    Ok(ForecastReport {
        train,
        mse: m,
        pcc: p,
        baseline_mse: b,
    })
}
