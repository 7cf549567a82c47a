use nalgebra::DMatrix;
use tempdistill_core::autodiff::Tensor;

use crate::error::{HarnessError, Result};

/// Ridge strength of the linear probe.
pub const PROBE_RIDGE: f64 = 1e-3;

fn rows(tensors: &[&Tensor]) -> Result<(usize, usize)> {
    let mut count = 0;
    let mut width = None;
    for t in tensors {
        let s = t.shape();
        let w = *s.last().ok_or_else(|| HarnessError::Format("probe input is a scalar".into()))?;
        if *width.get_or_insert(w) != w {
            return Err(HarnessError::Format("probe inputs disagree on feature width".into()));
        }
        count += t.len() / w;
    }
    Ok((count, width.unwrap_or(0)))
}

fn design(tensors: &[&Tensor], bias: bool) -> Result<DMatrix<f64>> {
    let (n, w) = rows(tensors)?;
    let cols = w + usize::from(bias);
    let mut m = DMatrix::zeros(n, cols);
    let mut r = 0;
    for t in tensors {
        for row in t.data().chunks(w) {
            for (j, v) in row.iter().enumerate() {
                m[(r, j)] = *v;
            }
            if bias {
                m[(r, w)] = 1.0;
            }
            r += 1;
        }
    }
    Ok(m)
}

/// Held-out MSE of a ridge-regularized affine map from student feature
/// rows to teacher target rows, fitted on the training pairs. Measures how
/// much of the teacher's temporal aggregate is linearly recoverable from
/// the student's features.
pub fn alignment_mse(train_x: &[&Tensor], train_y: &[&Tensor], test_x: &[&Tensor], test_y: &[&Tensor]) -> Result<f64> {
    let (x, y) = (design(train_x, true)?, design(train_y, false)?);
    let (tx, ty) = (design(test_x, true)?, design(test_y, false)?);
    if x.nrows() != y.nrows() || tx.nrows() != ty.nrows() || x.nrows() == 0 || tx.nrows() == 0 {
        return Err(HarnessError::Format("probe inputs and targets have different row counts".into()));
    }
    let mut gram = x.transpose() * &x;
    for i in 0..gram.nrows() {
        gram[(i, i)] += PROBE_RIDGE;
    }
    let rhs = x.transpose() * &y;
    let chol = gram.cholesky().ok_or_else(|| HarnessError::Format("probe system is not positive definite".into()))?;
    let weights = chol.solve(&rhs);
    let residual = tx * weights - ty;
    Ok(residual.iter().map(|v| v * v).sum::<f64>() / residual.len() as f64)
}
