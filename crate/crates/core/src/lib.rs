//! Gated multi-expert data augmentation for time-series classification.

pub mod analyze;
pub mod augment;
pub mod checkpoint;
pub mod error;
pub mod loss;
pub mod model;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod series;
pub mod train;

pub use error::{Error, Result};
