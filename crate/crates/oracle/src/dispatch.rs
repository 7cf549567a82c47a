use std::fmt;
use std::str::FromStr;

use crate::composite::{self, GeneratorWeights};
use crate::reference;
use crate::{OracleError, Result};

/// A shaped row-major buffer. Scalars (including integer arguments such as
/// frame indices) are passed as zero-rank arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Array { shape, data }
    }

    pub fn scalar(v: f64) -> Self {
        Array { shape: vec![], data: vec![v] }
    }

    fn as_scalar(&self, op: &'static str) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(shape_err(op, format!("expected a scalar, got shape {:?}", self.shape)));
        }
        Ok(self.data[0])
    }

    fn dims<const N: usize>(&self, op: &'static str) -> Result<[usize; N]> {
        self.shape
            .as_slice()
            .try_into()
            .map_err(|_| shape_err(op, format!("expected rank {N}, got shape {:?}", self.shape)))
    }
}

fn shape_err(op: &'static str, detail: String) -> OracleError {
    OracleError::Shape { op, detail }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OracleOp {
    MatMul,
    Transpose,
    SoftmaxRows,
    LogSoftmaxRows,
    Relu,
    Tanh,
    Conv1dSame3,
    Conv2dSame3,
    Add,
    Sub,
    Mul,
    Scale,
    ReduceMean,
    TsaAggregate,
    TsaAggregateSwapped,
    Generator1d,
    Generator2d,
    RcBevLoss,
    RcPvLoss,
    SpatialReconstructionLoss,
    Similarity,
    TrdLoss,
    DcLoss,
    TaskLoss,
}

impl OracleOp {
    pub const ALL: [OracleOp; 24] = [
        OracleOp::MatMul,
        OracleOp::Transpose,
        OracleOp::SoftmaxRows,
        OracleOp::LogSoftmaxRows,
        OracleOp::Relu,
        OracleOp::Tanh,
        OracleOp::Conv1dSame3,
        OracleOp::Conv2dSame3,
        OracleOp::Add,
        OracleOp::Sub,
        OracleOp::Mul,
        OracleOp::Scale,
        OracleOp::ReduceMean,
        OracleOp::TsaAggregate,
        OracleOp::TsaAggregateSwapped,
        OracleOp::Generator1d,
        OracleOp::Generator2d,
        OracleOp::RcBevLoss,
        OracleOp::RcPvLoss,
        OracleOp::SpatialReconstructionLoss,
        OracleOp::Similarity,
        OracleOp::TrdLoss,
        OracleOp::DcLoss,
        OracleOp::TaskLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OracleOp::MatMul => "matmul",
            OracleOp::Transpose => "transpose",
            OracleOp::SoftmaxRows => "softmax_rows",
            OracleOp::LogSoftmaxRows => "log_softmax_rows",
            OracleOp::Relu => "relu",
            OracleOp::Tanh => "tanh",
            OracleOp::Conv1dSame3 => "conv1d_same3",
            OracleOp::Conv2dSame3 => "conv2d_same3",
            OracleOp::Add => "add",
            OracleOp::Sub => "sub",
            OracleOp::Mul => "mul",
            OracleOp::Scale => "scale",
            OracleOp::ReduceMean => "reduce_mean",
            OracleOp::TsaAggregate => "tsa_aggregate",
            OracleOp::TsaAggregateSwapped => "tsa_aggregate_swapped",
            OracleOp::Generator1d => "generator_1d",
            OracleOp::Generator2d => "generator_2d",
            OracleOp::RcBevLoss => "rc_bev_loss",
            OracleOp::RcPvLoss => "rc_pv_loss",
            OracleOp::SpatialReconstructionLoss => "spatial_reconstruction_loss",
            OracleOp::Similarity => "similarity",
            OracleOp::TrdLoss => "trd_loss",
            OracleOp::DcLoss => "dc_loss",
            OracleOp::TaskLoss => "task_loss",
        }
    }

    fn arity(self) -> usize {
        match self {
            OracleOp::Transpose
            | OracleOp::SoftmaxRows
            | OracleOp::LogSoftmaxRows
            | OracleOp::Relu
            | OracleOp::Tanh
            | OracleOp::ReduceMean => 1,
            OracleOp::MatMul
            | OracleOp::Add
            | OracleOp::Sub
            | OracleOp::Mul
            | OracleOp::Scale
            | OracleOp::TsaAggregate
            | OracleOp::TsaAggregateSwapped
            | OracleOp::DcLoss
            | OracleOp::TaskLoss => 2,
            OracleOp::Conv1dSame3 | OracleOp::Conv2dSame3 | OracleOp::Similarity | OracleOp::TrdLoss => 3,
            OracleOp::Generator1d | OracleOp::Generator2d => 5,
            OracleOp::RcBevLoss | OracleOp::RcPvLoss | OracleOp::SpatialReconstructionLoss => 7,
        }
    }
}

impl fmt::Display for OracleOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OracleOp {
    type Err = OracleError;

    fn from_str(s: &str) -> Result<Self> {
        OracleOp::ALL
            .iter()
            .copied()
            .find(|op| op.name() == s)
            .ok_or_else(|| OracleError::UnknownOp(s.to_string()))
    }
}

fn generator(op: &'static str, inputs: &[Array], channels: usize, taps: usize) -> Result<GeneratorWeights> {
    let expect_w = channels * channels * taps;
    if inputs[0].data.len() != expect_w || inputs[2].data.len() != expect_w {
        return Err(shape_err(op, format!("generator weights must hold {expect_w} entries")));
    }
    if inputs[1].data.len() != channels || inputs[3].data.len() != channels {
        return Err(shape_err(op, format!("generator biases must hold {channels} entries")));
    }
    Ok(GeneratorWeights {
        channels,
        w1: inputs[0].data.clone(),
        b1: inputs[1].data.clone(),
        w2: inputs[2].data.clone(),
        b2: inputs[3].data.clone(),
    })
}

fn same_len(op: &'static str, a: &Array, b: &Array) -> Result<()> {
    if a.shape != b.shape {
        return Err(shape_err(op, format!("shapes {:?} and {:?} differ", a.shape, b.shape)));
    }
    Ok(())
}

/// Evaluates `op` longhand.
pub fn oracle_forward(op: OracleOp, inputs: &[Array]) -> Result<Array> {
    let name = op.name();
    if inputs.len() != op.arity() {
        return Err(OracleError::Arity { op: name, expected: op.arity(), got: inputs.len() });
    }
    let out = match op {
        OracleOp::MatMul => {
            let [m, k] = inputs[0].dims::<2>(name)?;
            let [k2, n] = inputs[1].dims::<2>(name)?;
            if k != k2 {
                return Err(shape_err(name, format!("inner extents {k} and {k2} differ")));
            }
            Array::new(vec![m, n], reference::matmul(&inputs[0].data, &inputs[1].data, m, k, n))
        }
        OracleOp::Transpose => {
            let [m, n] = inputs[0].dims::<2>(name)?;
            Array::new(vec![n, m], reference::transpose(&inputs[0].data, m, n))
        }
        OracleOp::SoftmaxRows | OracleOp::LogSoftmaxRows => {
            let [m, n] = inputs[0].dims::<2>(name)?;
            let data = if op == OracleOp::SoftmaxRows {
                reference::softmax_rows(&inputs[0].data, m, n)
            } else {
                reference::log_softmax_rows(&inputs[0].data, m, n)
            };
            Array::new(vec![m, n], data)
        }
        OracleOp::Relu => Array::new(inputs[0].shape.clone(), reference::relu(&inputs[0].data)),
        OracleOp::Tanh => Array::new(inputs[0].shape.clone(), reference::tanh(&inputs[0].data)),
        OracleOp::Conv1dSame3 => {
            let [c_in, len] = inputs[0].dims::<2>(name)?;
            let [c_out, c_in2, taps] = inputs[1].dims::<3>(name)?;
            if c_in != c_in2 || taps != 3 || inputs[2].data.len() != c_out {
                return Err(shape_err(name, "weight/bias shapes do not match input".into()));
            }
            Array::new(
                vec![c_out, len],
                reference::conv1d_same3(&inputs[0].data, c_in, len, &inputs[1].data, c_out, &inputs[2].data),
            )
        }
        OracleOp::Conv2dSame3 => {
            let [c_in, h, w] = inputs[0].dims::<3>(name)?;
            let [c_out, c_in2, kh, kw] = inputs[1].dims::<4>(name)?;
            if c_in != c_in2 || kh != 3 || kw != 3 || inputs[2].data.len() != c_out {
                return Err(shape_err(name, "weight/bias shapes do not match input".into()));
            }
            Array::new(
                vec![c_out, h, w],
                reference::conv2d_same3(&inputs[0].data, c_in, h, w, &inputs[1].data, c_out, &inputs[2].data),
            )
        }
        OracleOp::Add | OracleOp::Sub => {
            same_len(name, &inputs[0], &inputs[1])?;
            let data = if op == OracleOp::Add {
                reference::add(&inputs[0].data, &inputs[1].data)
            } else {
                reference::sub(&inputs[0].data, &inputs[1].data)
            };
            Array::new(inputs[0].shape.clone(), data)
        }
        OracleOp::Mul => {
            let (a, b) = (&inputs[0], &inputs[1]);
            if a.shape == b.shape {
                Array::new(a.shape.clone(), reference::mul(&a.data, &b.data))
            } else if !a.shape.is_empty() && b.shape.as_slice() == &a.shape[..a.shape.len() - 1] {
                let channels = *a.shape.last().unwrap();
                Array::new(a.shape.clone(), reference::mul_rows(&a.data, &b.data, channels))
            } else {
                return Err(shape_err(name, format!("cannot combine {:?} with {:?}", a.shape, b.shape)));
            }
        }
        OracleOp::Scale => {
            let s = inputs[1].as_scalar(name)?;
            Array::new(inputs[0].shape.clone(), reference::scale(&inputs[0].data, s))
        }
        OracleOp::ReduceMean => {
            if inputs[0].data.is_empty() {
                return Err(shape_err(name, "empty input".into()));
            }
            Array::scalar(reference::reduce_mean(&inputs[0].data))
        }
        OracleOp::TsaAggregate | OracleOp::TsaAggregateSwapped => {
            let [t_tea, nq, c] = inputs[0].dims::<3>(name)?;
            let t_stu = inputs[1].as_scalar(name)? as usize;
            if t_stu == 0 || t_stu > t_tea || t_tea - t_stu >= 8 {
                return Err(shape_err(name, format!("invalid frame counts {t_tea} -> {t_stu}")));
            }
            let data = if op == OracleOp::TsaAggregate {
                composite::tsa_aggregate(&inputs[0].data, t_tea, nq, c, t_stu)
            } else {
                composite::tsa_aggregate_swapped(&inputs[0].data, t_tea, nq, c, t_stu)
            };
            Array::new(vec![t_stu, nq, c], data)
        }
        OracleOp::Generator1d => {
            let [nq, c] = inputs[0].dims::<2>(name)?;
            let g = generator(name, &inputs[1..], c, 3)?;
            Array::new(vec![nq, c], composite::generator_1d(&inputs[0].data, nq, &g))
        }
        OracleOp::Generator2d => {
            let [c, h, w] = inputs[0].dims::<3>(name)?;
            let g = generator(name, &inputs[1..], c, 9)?;
            Array::new(vec![c, h, w], composite::generator_2d(&inputs[0].data, h, w, &g))
        }
        OracleOp::RcBevLoss => {
            let [t_stu, nq, c] = inputs[0].dims::<3>(name)?;
            let [t_tea, nq2, c2] = inputs[1].dims::<3>(name)?;
            if nq != nq2 || c != c2 || t_tea < t_stu || inputs[2].shape != [t_stu, nq] {
                return Err(shape_err(name, "student/teacher/mask shapes disagree".into()));
            }
            let g = generator(name, &inputs[3..], c, 3)?;
            Array::scalar(composite::rc_bev_loss(
                &inputs[0].data,
                &inputs[1].data,
                t_stu,
                t_tea,
                nq,
                c,
                &inputs[2].data,
                &g,
            ))
        }
        OracleOp::RcPvLoss | OracleOp::SpatialReconstructionLoss => {
            let [t_stu, c, h, w] = inputs[0].dims::<4>(name)?;
            let [t_tea, c2, h2, w2] = inputs[1].dims::<4>(name)?;
            if c != c2 || h != h2 || w != w2 || t_tea < t_stu || inputs[2].shape != [t_stu, h, w] {
                return Err(shape_err(name, "student/teacher/mask shapes disagree".into()));
            }
            let g = generator(name, &inputs[3..], c, 9)?;
            let v = if op == OracleOp::RcPvLoss {
                composite::rc_pv_loss(&inputs[0].data, &inputs[1].data, t_stu, t_tea, c, h, w, &inputs[2].data, &g)
            } else {
                composite::spatial_reconstruction_loss(&inputs[0].data, &inputs[1].data, t_stu, c, h, w, &inputs[2].data, &g)
            };
            Array::scalar(v)
        }
        OracleOp::Similarity => {
            let [t, nq, c] = inputs[0].dims::<3>(name)?;
            let i = inputs[1].as_scalar(name)? as usize;
            let j = inputs[2].as_scalar(name)? as usize;
            if i >= t || j >= t || i == j {
                return Err(shape_err(name, format!("invalid frame pair ({i}, {j})")));
            }
            Array::new(vec![nq, nq], composite::similarity(&inputs[0].data, nq, c, i, j))
        }
        OracleOp::TrdLoss => {
            same_len(name, &inputs[0], &inputs[1])?;
            let [t, nq, c] = inputs[0].dims::<3>(name)?;
            let tau = inputs[2].as_scalar(name)?;
            Array::scalar(composite::trd_loss(&inputs[0].data, &inputs[1].data, t, nq, c, tau))
        }
        OracleOp::DcLoss => {
            same_len(name, &inputs[0], &inputs[1])?;
            Array::scalar(composite::dc_loss(&inputs[0].data, &inputs[1].data))
        }
        OracleOp::TaskLoss => {
            let [nq, four] = inputs[0].dims::<2>(name)?;
            let [objects, four2] = inputs[1].dims::<2>(name)?;
            if four != 4 || four2 != 4 {
                return Err(shape_err(name, "rows must be (x, y, vx, vy)".into()));
            }
            Array::scalar(composite::task_loss(&inputs[0].data, nq, &inputs[1].data, objects))
        }
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_op_is_rejected() {
        assert_eq!("convolve".parse::<OracleOp>(), Err(OracleError::UnknownOp("convolve".into())));
    }

    #[test]
    fn names_round_trip() {
        for op in OracleOp::ALL {
            assert_eq!(op.name().parse::<OracleOp>().unwrap(), op);
        }
    }

    #[test]
    fn identity_matmul() {
        let eye = Array::new(vec![2, 2], vec![1., 0., 0., 1.]);
        let a = Array::new(vec![2, 2], vec![1., 2., 3., 4.]);
        assert_eq!(oracle_forward(OracleOp::MatMul, &[eye, a.clone()]).unwrap(), a);
    }

    #[test]
    fn rc_bev_zero_on_equal_generated_and_target() {
        // Zero generator output and zero teacher give a zero target.
        let student = Array::new(vec![1, 2, 1], vec![0.4, -0.2]);
        let teacher = Array::new(vec![1, 2, 1], vec![0.0, 0.0]);
        let mask = Array::new(vec![1, 2], vec![1.0, 1.0]);
        let w = Array::new(vec![1, 1, 3], vec![0.0; 3]);
        let b = Array::new(vec![1], vec![0.0]);
        let out = oracle_forward(
            OracleOp::RcBevLoss,
            &[student, teacher, mask, w.clone(), b.clone(), w, b],
        )
        .unwrap();
        assert_eq!(out.data, vec![0.0]);
    }

    #[test]
    fn arity_is_checked() {
        let a = Array::scalar(1.0);
        assert!(matches!(oracle_forward(OracleOp::MatMul, &[a]), Err(OracleError::Arity { .. })));
    }
}
