//! Knowledge-structured neural networks for gene expression.

pub mod cli;
pub mod discovery;
pub mod error;
pub mod knowledge;
pub mod layers;
pub mod model;
pub mod synth;
pub mod tasks;
pub mod trajectory;
pub mod numerics;
pub mod rng;

pub use error::{Error, Result};
