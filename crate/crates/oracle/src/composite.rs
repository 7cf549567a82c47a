//! Longhand transcriptions of the distillation losses.
//!
//! Layouts match the engine: BEV features are `frames×queries×channels`,
//! PV features are `frames×channels×height×width`, frame 0 is the current
//! timestamp and larger indices are older.

use crate::reference::{conv1d_same3, conv2d_same3, matmul, relu, softmax_rows, transpose};

/// Weights of a conv → ReLU → conv generator with `channels` in and out.
#[derive(Debug, Clone)]
pub struct GeneratorWeights {
    pub channels: usize,
    /// `channels×channels×3` (1D) or `channels×channels×3×3` (2D).
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

fn frame(x: &[f64], t: usize, size: usize) -> &[f64] {
    &x[t * size..(t + 1) * size]
}

/// One scaled dot-product term: `softmax(q kᵀ / √c) v`.
pub fn attention_term(q: &[f64], k: &[f64], v: &[f64], nq: usize, c: usize) -> Vec<f64> {
    let mut logits = vec![0.0; nq * nq];
    let scale = 1.0 / (c as f64).sqrt();
    for a in 0..nq {
        for b in 0..nq {
            let mut dot = 0.0;
            for ch in 0..c {
                dot += q[a * c + ch] * k[b * c + ch];
            }
            logits[a * nq + b] = dot * scale;
        }
    }
    let weights = softmax_rows(&logits, nq, nq);
    matmul(&weights, v, nq, nq, c)
}

/// Temporal self-attention aggregation of teacher features down to `t_stu`
/// frames. Term `t1` uses frame `t1` as query and value and frame `t` as key.
pub fn tsa_aggregate(teacher: &[f64], t_tea: usize, nq: usize, c: usize, t_stu: usize) -> Vec<f64> {
    let k = t_tea - t_stu;
    let size = nq * c;
    let mut out = vec![0.0; t_stu * size];
    for t in 0..t_stu {
        for t1 in 0..=(t + k) {
            let f1 = frame(teacher, t1, size);
            let ft = frame(teacher, t, size);
            let term = attention_term(f1, ft, f1, nq, c);
            for idx in 0..size {
                out[t * size + idx] += term[idx];
            }
        }
    }
    out
}

/// The alternative reading of the aggregation: frame `t` as query, frame
/// `t1` as key and value.
pub fn tsa_aggregate_swapped(teacher: &[f64], t_tea: usize, nq: usize, c: usize, t_stu: usize) -> Vec<f64> {
    let k = t_tea - t_stu;
    let size = nq * c;
    let mut out = vec![0.0; t_stu * size];
    for t in 0..t_stu {
        for t1 in 0..=(t + k) {
            let f1 = frame(teacher, t1, size);
            let ft = frame(teacher, t, size);
            let term = attention_term(ft, f1, f1, nq, c);
            for idx in 0..size {
                out[t * size + idx] += term[idx];
            }
        }
    }
    out
}

/// Generator on one BEV frame (`nq×c`); the query axis is the conv axis.
pub fn generator_1d(x: &[f64], nq: usize, g: &GeneratorWeights) -> Vec<f64> {
    let c = g.channels;
    let xt = transpose(x, nq, c);
    let hidden = relu(&conv1d_same3(&xt, c, nq, &g.w1, c, &g.b1));
    let out = conv1d_same3(&hidden, c, nq, &g.w2, c, &g.b2);
    transpose(&out, c, nq)
}

/// Generator on one PV frame (`c×h×w`).
pub fn generator_2d(x: &[f64], h: usize, w: usize, g: &GeneratorWeights) -> Vec<f64> {
    let c = g.channels;
    let hidden = relu(&conv2d_same3(x, c, h, w, &g.w1, c, &g.b1));
    conv2d_same3(&hidden, c, h, w, &g.w2, c, &g.b2)
}

fn mean_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        acc += d * d;
    }
    acc / a.len() as f64
}

/// BEV temporal reconstruction loss. `mask` is `t_stu×nq`.
#[allow(clippy::too_many_arguments)]
pub fn rc_bev_loss(
    student: &[f64],
    teacher: &[f64],
    t_stu: usize,
    t_tea: usize,
    nq: usize,
    c: usize,
    mask: &[f64],
    g: &GeneratorWeights,
) -> f64 {
    let size = nq * c;
    let mut generated = Vec::with_capacity(t_stu * size);
    for t in 0..t_stu {
        let mut masked = frame(student, t, size).to_vec();
        for q in 0..nq {
            for ch in 0..c {
                masked[q * c + ch] *= mask[t * nq + q];
            }
        }
        generated.extend(generator_1d(&masked, nq, g));
    }
    let target = tsa_aggregate(teacher, t_tea, nq, c, t_stu);
    mean_sq_diff(&generated, &target)
}

fn masked_generated_pv(student: &[f64], t_stu: usize, c: usize, h: usize, w: usize, mask: &[f64], g: &GeneratorWeights) -> Vec<f64> {
    let size = c * h * w;
    let mut generated = Vec::with_capacity(t_stu * size);
    for t in 0..t_stu {
        let mut masked = frame(student, t, size).to_vec();
        for ch in 0..c {
            for p in 0..h * w {
                masked[ch * h * w + p] *= mask[t * h * w + p];
            }
        }
        generated.extend(generator_2d(&masked, h, w, g));
    }
    generated
}

/// PV temporal reconstruction loss. Each frame's `h·w` pixels are the token
/// set for the aggregation. `mask` is `t_stu×h×w`.
#[allow(clippy::too_many_arguments)]
pub fn rc_pv_loss(
    student: &[f64],
    teacher: &[f64],
    t_stu: usize,
    t_tea: usize,
    c: usize,
    h: usize,
    w: usize,
    mask: &[f64],
    g: &GeneratorWeights,
) -> f64 {
    let l = h * w;
    let size = c * l;
    let generated = masked_generated_pv(student, t_stu, c, h, w, mask, g);
    let mut tokens = Vec::with_capacity(t_tea * size);
    for t in 0..t_tea {
        tokens.extend(transpose(frame(teacher, t, size), c, l));
    }
    let agg = tsa_aggregate(&tokens, t_tea, l, c, t_stu);
    let mut target = Vec::with_capacity(t_stu * size);
    for t in 0..t_stu {
        target.extend(transpose(frame(&agg, t, size), l, c));
    }
    mean_sq_diff(&generated, &target)
}

/// Masked generation against the same-frame teacher feature.
#[allow(clippy::too_many_arguments)]
pub fn spatial_reconstruction_loss(
    student: &[f64],
    teacher: &[f64],
    t_stu: usize,
    c: usize,
    h: usize,
    w: usize,
    mask: &[f64],
    g: &GeneratorWeights,
) -> f64 {
    let generated = masked_generated_pv(student, t_stu, c, h, w, mask, g);
    mean_sq_diff(&generated, &teacher[..t_stu * c * h * w])
}

/// `F_i F_jᵀ` as an `nq×nq` buffer.
pub fn similarity(f: &[f64], nq: usize, c: usize, i: usize, j: usize) -> Vec<f64> {
    let size = nq * c;
    let fi = frame(f, i, size);
    let fj = frame(f, j, size);
    let mut s = vec![0.0; nq * nq];
    for a in 0..nq {
        for b in 0..nq {
            let mut dot = 0.0;
            for ch in 0..c {
                dot += fi[a * c + ch] * fj[b * c + ch];
            }
            s[a * nq + b] = dot;
        }
    }
    s
}

/// Relational KL loss averaged over frame pairs `i < j`.
pub fn trd_loss(student: &[f64], teacher: &[f64], frames: usize, nq: usize, c: usize, tau: f64) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..frames {
        for j in (i + 1)..frames {
            let s_stu: Vec<f64> = similarity(student, nq, c, i, j).iter().map(|v| v / tau).collect();
            let s_tea: Vec<f64> = similarity(teacher, nq, c, i, j).iter().map(|v| v / tau).collect();
            let p = softmax_rows(&s_stu, nq, nq);
            let q = softmax_rows(&s_tea, nq, nq);
            let mut kl = 0.0;
            for n in 0..nq * nq {
                kl += p[n] * (p[n] / q[n]).ln();
            }
            total += kl / (nq * nq) as f64;
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

pub fn dc_loss(student: &[f64], teacher: &[f64]) -> f64 {
    mean_sq_diff(student, teacher)
}

/// Task loss by exhaustive search: each ground-truth row `(x, y, vx, vy)` is
/// matched to the prediction with the nearest position (lowest index on
/// ties), then the mean absolute error over all matched entries is taken.
pub fn task_loss(predictions: &[f64], nq: usize, truth: &[f64], objects: usize) -> f64 {
    let mut total = 0.0;
    for k in 0..objects {
        let gt = &truth[k * 4..k * 4 + 4];
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for q in 0..nq {
            let dx = predictions[q * 4] - gt[0];
            let dy = predictions[q * 4 + 1] - gt[1];
            let d = dx * dx + dy * dy;
            if d < best_d {
                best_d = d;
                best = q;
            }
        }
        for e in 0..4 {
            total += (predictions[best * 4 + e] - gt[e]).abs();
        }
    }
    total / (objects * 4) as f64
}

/// Position of a current-frame point moving at `velocity`, expressed in the
/// coordinates of the frame `offset` steps in the past. `ego[s]` is the
/// observer's translation from frame `s + 1` to frame `s`.
pub fn ego_align(position: [f64; 2], velocity: [f64; 2], offset: usize, ego: &[[f64; 2]], dt: f64) -> [f64; 2] {
    let elapsed = offset as f64 * dt;
    let mut x = position[0] - velocity[0] * elapsed;
    let mut y = position[1] - velocity[1] * elapsed;
    for step in ego.iter().take(offset) {
        x += step[0];
        y += step[1];
    }
    [x, y]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_frame_attention_by_hand() {
        // nq = 2, c = 1, f = [1, 2]: logits [[1,2],[2,4]]
        let f = [1.0, 2.0];
        let out = tsa_aggregate(&f, 1, 2, 1, 1);
        let e = std::f64::consts::E;
        let r0 = (1.0 * e + 2.0 * e * e) / (e + e * e);
        let r1 = (1.0 * e.powi(2) + 2.0 * e.powi(4)) / (e.powi(2) + e.powi(4));
        assert!((out[0] - r0).abs() < 1e-14);
        assert!((out[1] - r1).abs() < 1e-14);
    }

    #[test]
    fn trd_of_identical_features_is_zero() {
        let f: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        assert!(trd_loss(&f, &f, 3, 2, 2, 0.5).abs() < 1e-15);
    }

    #[test]
    fn task_loss_ties_pick_lowest_index() {
        let preds = [1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 4.0, 4.0];
        let truth = [0.0, 0.0, 0.0, 0.0];
        assert_eq!(task_loss(&preds, 2, &truth, 1), 0.25);
    }

    #[test]
    fn ego_align_kinematics() {
        let p = ego_align([10.0, 0.0], [2.0, 0.0], 1, &[[0.0, 0.0]], 0.5);
        assert_eq!(p, [9.0, 0.0]);
    }
}
