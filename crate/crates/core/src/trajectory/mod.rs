//! Population dynamics as a continuous normalizing flow: a piecewise,
//! knowledge-structured vector field in expression space, RK4 integration,
//! exact log-density bookkeeping and Wasserstein training.

mod field;
mod ode;
mod transport;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use field::{structures_from_kb, CnfField, FieldConfig, PieceWeights};
pub use ode::{
    integrate_batch, integrate_graph, integrate_ode, log_density_change, piece_at, piece_bounds, schedule, AffineField,
    Dynamics, GraphDynamics, Segment,
};
pub use transport::{equalize, hungarian, optimal_matching, wasserstein_distance};

use crate::error::{Error, Result};
use crate::numerics::{adam_step, AdamConfig, AdamState, Graph, Matrix, ParamStore};
use crate::rng::BfRng;
use crate::tasks::FrameSet;

/// Rows of a matrix as sample vectors.
pub fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnfTrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Samples drawn per timestamp each epoch.
    pub batch_size: usize,
    /// RK4 steps per interval.
    pub steps: usize,
    pub seed: u64,
}

impl Default for CnfTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            epochs: 100,
            batch_size: 128,
            steps: 40,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CnfReport {
    /// Per epoch, the backward-mapped Wasserstein loss of each interval.
    pub losses: Vec<Vec<f64>>,
}

impl CnfReport {
    pub fn epoch_totals(&self) -> Vec<f64> {
        self.losses.iter().map(|l| l.iter().sum()).collect()
    }
}

fn check_batch(frames: &FrameSet, dim: usize) -> Result<()> {
    if frames.len() < 2 {
        return Err(Error::invalid("trajectory training needs at least two timestamps"));
    }
    if frames.genes.len() != dim {
        return Err(Error::Shape(format!("{} genes for a field on ℝ^{dim}", frames.genes.len())));
    }
    if let Some(i) = frames.frames.iter().position(|f| f.rows() == 0) {
        return Err(Error::invalid(format!("timestamp {} has no samples", frames.times[i])));
    }
    Ok(())
}

fn draw_rows(m: &Matrix, k: usize, rng: &mut BfRng) -> Matrix {
    let mut idx = rng.choose_indices(m.rows(), k);
    idx.sort_unstable();
    m.select_rows(&idx)
}

/// Backward-maps samples at each t_i to t_{i−1} and compares them with the
/// samples observed there; returns the interval losses without training.
pub fn interval_losses(field: &CnfField, frames: &FrameSet, steps: usize, batch: usize, seed: u64) -> Result<Vec<f64>> {
    check_batch(frames, field.dim())?;
    let mut rng = BfRng::new(seed);
    (1..frames.len())
        .map(|i| {
            let m = batch.min(frames.frames[i].rows()).min(frames.frames[i - 1].rows());
            let x = draw_rows(&frames.frames[i], m, &mut rng);
            let y = draw_rows(&frames.frames[i - 1], m, &mut rng);
            let mapped = integrate_batch(field, &x, frames.times[i], frames.times[i - 1], steps)?;
            wasserstein_distance(&rows_of(&mapped), &rows_of(&y))
        })
        .collect()
}

/// Fits the field by differentiating the backward-mapped Wasserstein loss
/// through the integrator. The matching is recomputed on every step and held
/// fixed while differentiating.
pub fn train_cnf(field: &mut CnfField, frames: &FrameSet, cfg: &CnfTrainConfig) -> Result<CnfReport> {
    check_batch(frames, field.dim())?;
    if !(cfg.lr > 0.0) || cfg.batch_size == 0 {
        return Err(Error::Config("trajectory training needs lr > 0 and batch_size > 0".into()));
    }
    let root = BfRng::new(cfg.seed);
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
    let mut report = CnfReport::default();
    for epoch in 0..cfg.epochs {
        let mut rng = root.derive(epoch as u64);
        let (grads, losses) = {
            let mut g = Graph::new(field.params());
            let mut terms = Vec::new();
            let mut losses = Vec::new();
            for i in 1..frames.len() {
                let m = cfg.batch_size.min(frames.frames[i].rows()).min(frames.frames[i - 1].rows());
                let x = draw_rows(&frames.frames[i], m, &mut rng);
                let y = draw_rows(&frames.frames[i - 1], m, &mut rng);
                let x = g.constant(x);
                let mapped = integrate_graph(&*field, &mut g, x, frames.times[i], frames.times[i - 1], cfg.steps)?;
                let matching = optimal_matching(&rows_of(g.value(mapped)), &rows_of(&y))?;
                let target = g.constant(y.select_rows(&matching));
                let diff = g.sub(mapped, target)?;
                let dist = g.row_norms(diff)?;
                let loss = g.mean(dist)?;
                losses.push(g.value(loss).as_scalar().unwrap_or(f64::NAN));
                terms.push(loss);
            }
            let mut total = terms[0];
            for t in &terms[1..] {
                total = g.add(total, *t)?;
            }
            if losses.iter().any(|l| !l.is_finite()) {
                return Err(Error::Diverged(format!("non-finite trajectory loss at epoch {epoch}")));
            }
            (g.backward(total)?, losses)
        };
        if !grads.global_norm().is_finite() {
            return Err(Error::Diverged(format!("non-finite gradient at epoch {epoch}")));
        }
        adam_step(&mut adam, &grads, field.params_mut())?;
        report.losses.push(losses);
    }
    Ok(report)
}

/// Forward-integrates `x0` (observed at `t0`) through each horizon timestamp in turn.
pub fn simulate<D: Dynamics + ?Sized>(dynamics: &D, x0: &Matrix, t0: f64, horizon: &[f64], steps: usize) -> Result<Vec<Matrix>> {
    let mut out = Vec::with_capacity(horizon.len());
    let mut x = x0.clone();
    let mut t = t0;
    for &h in horizon {
        if h <= t {
            return Err(Error::invalid("horizon timestamps must increase past the start time"));
        }
        x = integrate_batch(dynamics, &x, t, h, steps)?;
        out.push(x.clone());
        t = h;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationReport {
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
}

impl SimulationReport {
    /// Mean distance over the predicted timestamps, `None` for an empty horizon.
    pub fn mean(&self) -> Option<f64> {
        (!self.distances.is_empty()).then(|| self.distances.iter().sum::<f64>() / self.distances.len() as f64)
    }
}

/// Per-timestamp Wasserstein distance between predicted and held-out sets,
/// subsampling the larger of each pair.
pub fn simulation_report(times: &[f64], predicted: &[Matrix], truth: &[Matrix], seed: u64) -> Result<SimulationReport> {
    if times.len() != predicted.len() || predicted.len() != truth.len() {
        return Err(Error::Shape("simulation report needs one truth set per prediction".into()));
    }
    let mut rng = BfRng::new(seed);
    let distances = predicted
        .iter()
        .zip(truth)
        .map(|(p, q)| {
            let (a, b) = equalize(&rows_of(p), &rows_of(q), &mut rng);
            wasserstein_distance(&a, &b)
        })
        .collect::<Result<_>>()?;
    Ok(SimulationReport {
        times: times.to_vec(),
        distances,
    })
}

#[derive(Serialize, Deserialize)]
struct FieldCheckpoint {
    config: FieldConfig,
    structures: Vec<Matrix>,
    params: ParamStore,
}

impl CnfField {
    pub fn save(&self, path: &Path) -> Result<()> {
        let ck = FieldCheckpoint {
            config: self.config().clone(),
            structures: self.structures().to_vec(),
            params: self.params().clone(),
        };
        let text = serde_json::to_string(&ck).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: FieldCheckpoint = serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))?;
        let mut field = CnfField::new(ck.config, ck.structures, &mut BfRng::new(0))?;
        if field.params().inventory() != ck.params.inventory() {
            return Err(Error::Checkpoint("field parameters do not match its structures".into()));
        }
        *field.params_mut() = ck.params;
        Ok(field)
    }
}
