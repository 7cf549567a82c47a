use crate::autodiff::{Graph, Tensor, Var};

/// A model whose trainable state is an ordered list of tensors.
pub trait Parameterized {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    /// Registers every tensor as a parameter leaf, in `tensors()` order.
    fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.tensors().into_iter().map(|t| g.param(t.clone())).collect()
    }

    /// Registers every tensor as a gradient-free constant.
    fn bind_frozen(&self, g: &mut Graph) -> Vec<Var> {
        self.tensors().into_iter().map(|t| g.constant(t.clone())).collect()
    }

    fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}
