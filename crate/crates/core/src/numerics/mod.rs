//! Differentiable dense-matrix engine: matrices, parameters, reverse-mode
//! gradients, Adam, batch normalization and a finite-difference oracle.

mod adam;
mod batchnorm;
mod gradcheck;
mod graph;
mod matrix;
mod params;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use batchnorm::{batch_norm, BatchStats, BnMode, RunningStats, BN_EPS, BN_MOMENTUM};
pub use gradcheck::{finite_difference_check, FdConfig, FdEntry, FdReport};
pub use graph::{
    evaluate, evaluate_with_gradients, sigmoid, Activation, Gradients, Graph, NodeId, LEAKY_SLOPE,
};
pub use matrix::Matrix;
pub use params::{Param, ParamStore};
