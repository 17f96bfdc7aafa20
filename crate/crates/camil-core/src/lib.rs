//! Engine for context-aware attention MIL over tiled slides: a small dense
//! tensor substrate with reverse-mode differentiation, slide-as-grid data
//! model with synthetic data generation, the attention model itself with its
//! ablation variants, contrastive encoder pretraining, and the train/eval
//! harness.

pub mod bagio;
pub mod contrastive;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pixmap;
pub mod seed;
pub mod segment;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{CamilError, Result};
pub use tensor::Matrix;
