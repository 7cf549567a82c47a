//! Dense `f64` tensors with a tape-based reverse-mode differentiator covering
//! exactly the operations the distillation losses and toy models use.

mod graph;
mod kernels;
mod params;
pub mod rng;
mod tensor;

pub use graph::{Gradients, Graph, GradientFault, OpKind, Var};
pub use params::Parameterized;
pub use rng::RandomSource;
pub use tensor::Tensor;
