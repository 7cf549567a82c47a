use crate::autodiff::{Graph, Parameterized, RandomSource, Tensor, Var};
use crate::error::{shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    /// 1D convolution along the query axis of BEV features.
    Bev,
    /// 2D convolution over PV feature maps.
    Pv,
}

/// conv → ReLU → conv, channel count preserved, applied to each frame
/// independently.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    kind: GeneratorKind,
    channels: usize,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

fn kernel_shape(kind: GeneratorKind, c: usize) -> Vec<usize> {
    match kind {
        GeneratorKind::Bev => vec![c, c, 3],
        GeneratorKind::Pv => vec![c, c, 3, 3],
    }
}

impl Generator {
    pub fn from_parts(kind: GeneratorKind, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Result<Self> {
        let c = b1.len();
        let ks = kernel_shape(kind, c);
        if w1.shape() != ks.as_slice() || w2.shape() != ks.as_slice() || b1.shape() != [c] || b2.shape() != [c] {
            return Err(shape_err("generator", format!("weights must be {ks:?} with biases [{c}]")));
        }
        Ok(Generator { kind, channels: c, w1, b1, w2, b2 })
    }

    /// Uniform init scaled by fan-in, zero biases.
    pub fn random(kind: GeneratorKind, channels: usize, rng: &mut RandomSource) -> Self {
        let ks = kernel_shape(kind, channels);
        let fan_in = (ks[1..].iter().product::<usize>()) as f64;
        let bound = (3.0 / fan_in).sqrt();
        Generator {
            kind,
            channels,
            w1: Tensor::uniform(&ks, -bound, bound, rng),
            b1: Tensor::zeros(&[channels]),
            w2: Tensor::uniform(&ks, -bound, bound, rng),
            b2: Tensor::zeros(&[channels]),
        }
    }

    /// Centered delta kernels mapping each channel to itself, zero biases.
    /// Acts as the identity on nonnegative inputs.
    pub fn identity(kind: GeneratorKind, channels: usize) -> Self {
        let ks = kernel_shape(kind, channels);
        let taps = if kind == GeneratorKind::Bev { 3 } else { 9 };
        let center = taps / 2;
        let delta = Tensor::from_fn(&ks, |i| {
            let tap = i % taps;
            let pair = i / taps;
            if tap == center && pair / channels == pair % channels {
                1.0
            } else {
                0.0
            }
        });
        Generator {
            kind,
            channels,
            w1: delta.clone(),
            b1: Tensor::zeros(&[channels]),
            w2: delta,
            b2: Tensor::zeros(&[channels]),
        }
    }

    pub fn kind(&self) -> GeneratorKind {
        self.kind
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bind_vars(&self, g: &mut Graph) -> GeneratorVars {
        let v = self.bind(g);
        GeneratorVars { kind: self.kind, w1: v[0], b1: v[1], w2: v[2], b2: v[3] }
    }

    pub fn bind_frozen_vars(&self, g: &mut Graph) -> GeneratorVars {
        let v = self.bind_frozen(g);
        GeneratorVars { kind: self.kind, w1: v[0], b1: v[1], w2: v[2], b2: v[3] }
    }
}

impl Parameterized for Generator {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// A generator's tensors registered in a graph.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorVars {
    pub kind: GeneratorKind,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl GeneratorVars {
    /// Hidden pre-activation and output for one frame.
    fn frame(&self, g: &mut Graph, x: Var) -> Result<(Var, Var)> {
        match self.kind {
            GeneratorKind::Bev => {
                // Nq×C → C×Nq so the query axis is the convolution axis.
                let xt = g.transpose(x)?;
                let h = g.conv1d_same3(xt, self.w1, self.b1)?;
                let a = g.relu(h);
                let y = g.conv1d_same3(a, self.w2, self.b2)?;
                Ok((h, g.transpose(y)?))
            }
            GeneratorKind::Pv => {
                let h = g.conv2d_same3(x, self.w1, self.b1)?;
                let a = g.relu(h);
                Ok((h, g.conv2d_same3(a, self.w2, self.b2)?))
            }
        }
    }

    /// Applies the generator to every frame of `features`
    /// (`T×Nq×C` for BEV, `T×C×H×W` for PV).
    pub fn generate(&self, g: &mut Graph, features: Var) -> Result<Var> {
        Ok(self.generate_with_hidden(g, features)?.0)
    }

    /// As [`GeneratorVars::generate`], also returning each frame's hidden
    /// pre-activation.
    pub fn generate_with_hidden(&self, g: &mut Graph, features: Var) -> Result<(Var, Vec<Var>)> {
        let shape = g.value(features).shape().to_vec();
        let expected_rank = if self.kind == GeneratorKind::Bev { 3 } else { 4 };
        if shape.len() != expected_rank {
            return Err(shape_err("generate_features", format!("{:?} generator got input {shape:?}", self.kind)));
        }
        let c_axis = if self.kind == GeneratorKind::Bev { 2 } else { 1 };
        let c = g.value(self.b1).len();
        if shape[c_axis] != c {
            return Err(shape_err("generate_features", format!("input has {} channels, generator {c}", shape[c_axis])));
        }
        let mut outs = Vec::with_capacity(shape[0]);
        let mut hidden = Vec::with_capacity(shape[0]);
        for t in 0..shape[0] {
            let x = g.frame(features, t)?;
            let (h, y) = self.frame(g, x)?;
            hidden.push(h);
            outs.push(y);
        }
        Ok((g.stack(&outs)?, hidden))
    }
}
