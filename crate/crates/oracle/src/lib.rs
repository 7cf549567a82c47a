//! Independent reference implementations used to cross-check the autodiff
//! engine and the distillation losses.
//!
//! Everything in this crate is written with explicit nested loops over flat
//! row-major buffers. It deliberately has no dependency on the engine it
//! checks, so a shared bug cannot hide on both sides of a comparison.

pub mod composite;
mod dispatch;
pub mod finite_diff;
pub mod reference;
pub mod report;

pub use dispatch::{oracle_forward, Array, OracleOp};
pub use finite_diff::{finite_diff_grad, DEFAULT_STEP};
pub use report::{relative_error, GradCheckReport, DEFAULT_TOLERANCE};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("unknown oracle operation `{0}`")]
    UnknownOp(String),
    #[error("{op}: expected {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, OracleError>;
