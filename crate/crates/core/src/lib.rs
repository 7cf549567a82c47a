//! Temporal knowledge distillation at desk scale: a small reverse-mode
//! tensor engine, the distillation loss stack, and synthetic multi-frame
//! scenes with toy teacher/student models.

pub mod autodiff;
pub mod distill;
mod error;
pub mod scene;

pub use error::{Error, Result};
