use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Gradients, Matrix, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates per parameter plus the shared step count.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: BTreeMap<String, Matrix>,
    second: BTreeMap<String, Matrix>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn first_moment(&self, name: &str) -> Option<&Matrix> {
        self.first.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Matrix> {
        self.second.get(name)
    }
}

/// One Adam update of every trainable parameter in `params`.
///
/// Frozen parameters are never touched. Every trainable parameter needs a
/// gradient in `grads`.
pub fn adam_step(state: &mut AdamState, grads: &Gradients, params: &mut ParamStore) -> Result<()> {
    let names: Vec<String> = params.trainable_names().map(str::to_string).collect();
    for name in &names {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::MissingGradient(name.clone()))?;
        let shape = params.get(name)?.shape();
        if g.shape() != shape {
            return Err(Error::Shape(format!(
                "gradient for `{name}` is {:?}, parameter is {shape:?}",
                g.shape()
            )));
        }
    }

    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let bias1 = 1.0 - beta1.powi(t);
    let bias2 = 1.0 - beta2.powi(t);

    for name in names {
        let g = grads.get(&name).expect("checked above");
        let (rows, cols) = g.shape();
        let m = state
            .first
            .entry(name.clone())
            .or_insert_with(|| Matrix::zeros(rows, cols));
        for (mv, gv) in m.data_mut().iter_mut().zip(g.data()) {
            *mv = beta1 * *mv + (1.0 - beta1) * gv;
        }
        let v = state
            .second
            .entry(name.clone())
            .or_insert_with(|| Matrix::zeros(rows, cols));
        for (vv, gv) in v.data_mut().iter_mut().zip(g.data()) {
            *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
        }
        let m = &state.first[&name];
        let v = &state.second[&name];
        let p = params.get_mut(&name).expect("trainable name came from the store");
        let data = p.value.data_mut();
        for i in 0..data.len() {
            let mhat = m.data()[i] / bias1;
            let vhat = v.data()[i] / bias2;
            let next = data[i] - lr * mhat / (vhat.sqrt() + eps);
            if !next.is_finite() {
                return Err(Error::Diverged(format!("parameter `{name}` became non-finite")));
            }
            data[i] = next;
        }
    }
    Ok(())
}
