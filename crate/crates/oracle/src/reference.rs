//! Naive primitives over flat row-major buffers.

/// `a` is `m×k`, `b` is `k×n`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

pub fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// Plain exp-and-normalize, no max subtraction.
pub fn softmax_rows(x: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let mut denom = 0.0;
        for j in 0..n {
            denom += x[i * n + j].exp();
        }
        for j in 0..n {
            out[i * n + j] = x[i * n + j].exp() / denom;
        }
    }
    out
}

pub fn log_softmax_rows(x: &[f64], m: usize, n: usize) -> Vec<f64> {
    softmax_rows(x, m, n).into_iter().map(f64::ln).collect()
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

pub fn tanh(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

/// Same-length cross-correlation with a length-3 kernel and zero padding 1.
///
/// `x` is `c_in×len`, `w` is `c_out×c_in×3`, `b` is `c_out`.
pub fn conv1d_same3(x: &[f64], c_in: usize, len: usize, w: &[f64], c_out: usize, b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; c_out * len];
    for o in 0..c_out {
        for l in 0..len {
            let mut acc = b[o];
            for i in 0..c_in {
                for k in 0..3 {
                    let pos = l as isize + k as isize - 1;
                    if pos < 0 || pos >= len as isize {
                        continue;
                    }
                    acc += w[(o * c_in + i) * 3 + k] * x[i * len + pos as usize];
                }
            }
            out[o * len + l] = acc;
        }
    }
    out
}

/// 2D analog of [`conv1d_same3`]: `x` is `c_in×h×w`, weights `c_out×c_in×3×3`.
pub fn conv2d_same3(
    x: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    c_out: usize,
    b: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; c_out * h * w];
    for o in 0..c_out {
        for r in 0..h {
            for c in 0..w {
                let mut acc = b[o];
                for i in 0..c_in {
                    for kr in 0..3 {
                        for kc in 0..3 {
                            let rr = r as isize + kr as isize - 1;
                            let cc = c as isize + kc as isize - 1;
                            if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                                continue;
                            }
                            let wi = ((o * c_in + i) * 3 + kr) * 3 + kc;
                            acc += weights[wi] * x[(i * h + rr as usize) * w + cc as usize];
                        }
                    }
                }
                out[(o * h + r) * w + c] = acc;
            }
        }
    }
    out
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

/// Multiplies an `rows×channels` buffer by a per-row factor.
pub fn mul_rows(a: &[f64], mask: &[f64], channels: usize) -> Vec<f64> {
    let mut out = a.to_vec();
    for (r, m) in mask.iter().enumerate() {
        for c in 0..channels {
            out[r * channels + c] *= m;
        }
    }
    out
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

pub fn reduce_mean(x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for v in x {
        acc += v;
    }
    acc / x.len() as f64
}
