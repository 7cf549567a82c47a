//! Training, verification and ablation harness for temporal feature
//! distillation on toy multi-frame scenes.

pub mod ablation;
pub mod config;
mod error;
pub mod optim;
pub mod output;
pub mod probe;
pub mod train;
pub mod verify;

pub use error::{HarnessError, Result};
