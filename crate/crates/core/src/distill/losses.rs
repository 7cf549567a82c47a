//! Graph-level loss builders. Student inputs are graph nodes so gradients
//! reach them; teacher inputs are either precomputed targets inserted as
//! constants or nodes that get detached before use.

use crate::autodiff::{Graph, Tensor, Var};
use crate::distill::features::{FeatureSet, PvFeatureSet, FINAL_PV_LEVEL};
use crate::distill::generator::{GeneratorKind, GeneratorVars};
use crate::distill::mask::MaskPlan;
use crate::error::{shape_err, Error, Result};

/// Largest allowed gap between teacher and student frame counts, exclusive.
pub const MAX_EXTRA_TEACHER_FRAMES: usize = 8;

/// Aggregated target plus every attention matrix that went into it, in
/// `(t, t1)` order.
#[derive(Debug, Clone)]
pub struct TsaNodes {
    pub aggregate: Var,
    pub attention: Vec<Var>,
}

/// Temporal self-attention over teacher features `T_tea×Nq×C`:
///
/// `agg[t] = Σ_{t1 ≤ t+k} softmax(F[t1] F[t]ᵀ / √C) F[t1]`, `k = T_tea − T_stu`.
pub fn tsa_aggregate_nodes(g: &mut Graph, teacher: Var, student_frames: usize) -> Result<TsaNodes> {
    let shape = g.value(teacher).shape().to_vec();
    if shape.len() != 3 {
        return Err(shape_err("tsa_aggregate", format!("expected T×Nq×C, got {shape:?}")));
    }
    let teacher_frames = shape[0];
    if student_frames == 0 || student_frames > teacher_frames {
        return Err(Error::InvalidArgument(format!(
            "student frames {student_frames} must lie in 1..={teacher_frames}"
        )));
    }
    let extra = teacher_frames - student_frames;
    if extra >= MAX_EXTRA_TEACHER_FRAMES {
        return Err(Error::InvalidArgument(format!("teacher has {extra} extra frames, limit is 7")));
    }
    let scale = 1.0 / (shape[2] as f64).sqrt();
    let frames: Vec<Var> = (0..teacher_frames).map(|t| g.frame(teacher, t)).collect::<Result<_>>()?;
    let mut outputs = Vec::with_capacity(student_frames);
    let mut attention = Vec::new();
    for t in 0..student_frames {
        let key = g.transpose(frames[t])?;
        let mut acc: Option<Var> = None;
        for &src in &frames[..=t + extra] {
            let logits = g.matmul(src, key)?;
            let logits = g.scale(logits, scale);
            let weights = g.softmax_rows(logits)?;
            attention.push(weights);
            let term = g.matmul(weights, src)?;
            acc = Some(match acc {
                Some(a) => g.add(a, term)?,
                None => term,
            });
        }
        outputs.push(acc.expect("at least one term"));
    }
    Ok(TsaNodes { aggregate: g.stack(&outputs)?, attention })
}

pub fn tsa_aggregate(teacher: &FeatureSet, student_frames: usize) -> Result<FeatureSet> {
    let mut g = Graph::new();
    let t = g.constant(teacher.values().clone());
    let nodes = tsa_aggregate_nodes(&mut g, t, student_frames)?;
    FeatureSet::new(g.value(nodes.aggregate).clone())
}

/// Attention matrices used by [`tsa_aggregate`].
pub fn tsa_attention_weights(teacher: &FeatureSet, student_frames: usize) -> Result<Vec<Tensor>> {
    let mut g = Graph::new();
    let t = g.constant(teacher.values().clone());
    let nodes = tsa_aggregate_nodes(&mut g, t, student_frames)?;
    Ok(nodes.attention.iter().map(|&a| g.value(a).clone()).collect())
}

fn pv_tokens(frame: &Tensor) -> Result<Tensor> {
    let s = frame.shape();
    frame.reshape(&[s[0], s[1] * s[2]])?.transposed()
}

/// PV analog of [`tsa_aggregate`]: each frame's `H·W` pixels are the token
/// set. Returns `T_stu×C×H×W`.
pub fn pv_tsa_aggregate(teacher: &PvFeatureSet, student_frames: usize) -> Result<Tensor> {
    let (c, h, w) = (teacher.channels(), teacher.height(), teacher.width());
    let tokens: Vec<Tensor> = (0..teacher.frames())
        .map(|t| pv_tokens(&teacher.values().frame(t)?))
        .collect::<Result<_>>()?;
    let agg = tsa_aggregate(&FeatureSet::new(Tensor::stack(&tokens)?)?, student_frames)?;
    let frames: Vec<Tensor> = (0..student_frames)
        .map(|t| agg.frame(t)?.transposed()?.reshape(&[c, h, w]))
        .collect::<Result<_>>()?;
    Tensor::stack(&frames)
}

fn mse_to_constant(g: &mut Graph, prediction: Var, target: &Tensor) -> Result<Var> {
    if g.value(prediction).shape() != target.shape() {
        return Err(shape_err(
            "reconstruction",
            format!("prediction {:?} vs target {:?}", g.value(prediction).shape(), target.shape()),
        ));
    }
    let t = g.constant(target.clone());
    let d = g.sub(prediction, t)?;
    let sq = g.mul(d, d)?;
    Ok(g.reduce_mean(sq))
}

/// Applies a channel-broadcast mask to `T×Nq×C` (BEV) or `T×C×H×W` (PV)
/// features.
pub fn apply_mask(g: &mut Graph, features: Var, mask: &MaskPlan) -> Result<Var> {
    let fs = g.value(features).shape().to_vec();
    let ms = mask.mask.shape();
    match fs.len() {
        3 if ms == &fs[..2] => {
            let m = g.constant(mask.mask.clone());
            g.mul(features, m)
        }
        4 if ms == [fs[0], fs[2], fs[3]] => {
            let m = g.constant(mask.expand_over_channels(fs[1])?);
            g.mul(features, m)
        }
        _ => Err(shape_err("apply_mask", format!("mask {ms:?} does not fit features {fs:?}"))),
    }
}

/// BEV reconstruction loss against a precomputed aggregate.
pub fn rc_bev_loss_to_target(
    g: &mut Graph,
    student: Var,
    target: &Tensor,
    generator: &GeneratorVars,
    mask: &MaskPlan,
) -> Result<Var> {
    if generator.kind != GeneratorKind::Bev {
        return Err(Error::InvalidArgument("BEV reconstruction needs a 1D generator".into()));
    }
    let masked = apply_mask(g, student, mask)?;
    let generated = generator.generate(g, masked)?;
    mse_to_constant(g, generated, target)
}

/// Masked BEV student features, regenerated, against the temporally
/// aggregated teacher. Mean over `T_stu·Nq·C` entries.
pub fn rc_bev_loss(
    g: &mut Graph,
    student: Var,
    teacher: &FeatureSet,
    generator: &GeneratorVars,
    mask: &MaskPlan,
) -> Result<Var> {
    let s = g.value(student).shape().to_vec();
    if s.len() != 3 || s[1] != teacher.queries() || s[2] != teacher.channels() {
        return Err(shape_err(
            "rc_bev_loss",
            format!("student {s:?} vs teacher {:?}", teacher.values().shape()),
        ));
    }
    let target = tsa_aggregate(teacher, s[0])?;
    rc_bev_loss_to_target(g, student, target.values(), generator, mask)
}

/// Masked PV reconstruction against any precomputed `T_stu×C×H×W` target.
pub fn pv_reconstruction_to_target(
    g: &mut Graph,
    student: Var,
    target: &Tensor,
    generator: &GeneratorVars,
    mask: &MaskPlan,
) -> Result<Var> {
    if generator.kind != GeneratorKind::Pv {
        return Err(Error::InvalidArgument("PV reconstruction needs a 2D generator".into()));
    }
    let masked = apply_mask(g, student, mask)?;
    let generated = generator.generate(g, masked)?;
    mse_to_constant(g, generated, target)
}

fn check_pv_pair(g: &Graph, op: &'static str, student: Var, teacher: &PvFeatureSet) -> Result<usize> {
    let s = g.value(student).shape();
    if s.len() != 4
        || s[1] != teacher.channels()
        || s[2] != teacher.height()
        || s[3] != teacher.width()
        || s[0] > teacher.frames()
    {
        return Err(shape_err(op, format!("student {s:?} vs teacher {:?}", teacher.values().shape())));
    }
    Ok(s[0])
}

/// Temporal PV reconstruction; only valid on the final FPN level.
pub fn rc_pv_loss(
    g: &mut Graph,
    student: Var,
    teacher: &PvFeatureSet,
    generator: &GeneratorVars,
    mask: &MaskPlan,
) -> Result<Var> {
    if teacher.level() != FINAL_PV_LEVEL {
        return Err(Error::InvalidArgument(format!(
            "temporal PV reconstruction applies to level 3 only, got level {}",
            teacher.level()
        )));
    }
    let frames = check_pv_pair(g, "rc_pv_loss", student, teacher)?;
    let target = pv_tsa_aggregate(teacher, frames)?;
    pv_reconstruction_to_target(g, student, &target, generator, mask)
}

/// Per-frame masked generation against the teacher's same-frame feature,
/// for FPN levels below the final one.
pub fn spatial_reconstruction_loss(
    g: &mut Graph,
    student: Var,
    teacher: &PvFeatureSet,
    generator: &GeneratorVars,
    mask: &MaskPlan,
) -> Result<Var> {
    if teacher.level() == FINAL_PV_LEVEL {
        return Err(Error::InvalidArgument(
            "level 3 uses temporal reconstruction, not spatial".into(),
        ));
    }
    let frames = check_pv_pair(g, "spatial_reconstruction_loss", student, teacher)?;
    let target = teacher.values().leading(frames)?;
    pv_reconstruction_to_target(g, student, &target, generator, mask)
}

/// `F_i F_jᵀ` for frames `i ≠ j` (0-based) of `T×Nq×C` features.
pub fn similarity(g: &mut Graph, features: Var, i: usize, j: usize) -> Result<Var> {
    let frames = g.value(features).shape().first().copied().unwrap_or(0);
    if i == j {
        return Err(Error::InvalidArgument(format!("self-similarity ({i}, {j}) is excluded")));
    }
    if i >= frames || j >= frames {
        return Err(Error::InvalidArgument(format!("frame pair ({i}, {j}) out of range for {frames} frames")));
    }
    let fi = g.frame(features, i)?;
    let fj = g.frame(features, j)?;
    let fjt = g.transpose(fj)?;
    g.matmul(fi, fjt)
}

/// Relational KL: for every frame pair `i < j`, row-wise softmax of `S/τ`
/// for student (p) and teacher (q), `mean(p · (log p − log q))` over the
/// `Nq²` entries, then mean over pairs. Zero when there is only one frame.
pub fn trd_loss(g: &mut Graph, student: Var, teacher: Var, temperature: f64) -> Result<Var> {
    let (ss, ts) = (g.value(student).shape().to_vec(), g.value(teacher).shape().to_vec());
    if ss.len() != 3 || ss != ts {
        return Err(shape_err("trd_loss", format!("student {ss:?} vs teacher {ts:?}")));
    }
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
    }
    let teacher = g.detach(teacher);
    let inv_tau = 1.0 / temperature;
    let mut total: Option<Var> = None;
    let mut pairs = 0usize;
    for i in 0..ss[0] {
        for j in (i + 1)..ss[0] {
            let s_stu = similarity(g, student, i, j)?;
            let s_stu = g.scale(s_stu, inv_tau);
            let s_tea = similarity(g, teacher, i, j)?;
            let s_tea = g.scale(s_tea, inv_tau);
            let p = g.softmax_rows(s_stu)?;
            let log_p = g.log_softmax_rows(s_stu)?;
            let log_q = g.log_softmax_rows(s_tea)?;
            let diff = g.sub(log_p, log_q)?;
            let terms = g.mul(p, diff)?;
            let kl = g.reduce_mean(terms);
            total = Some(match total {
                Some(acc) => g.add(acc, kl)?,
                None => kl,
            });
            pairs += 1;
        }
    }
    Ok(match total {
        Some(t) => g.scale(t, 1.0 / pairs as f64),
        None => g.constant(Tensor::scalar(0.0)),
    })
}

/// Mean squared difference of decoded features; the teacher side is detached.
pub fn dc_loss(g: &mut Graph, student: Var, teacher: Var) -> Result<Var> {
    if g.value(student).shape() != g.value(teacher).shape() {
        return Err(shape_err(
            "dc_loss",
            format!("{:?} vs {:?}", g.value(student).shape(), g.value(teacher).shape()),
        ));
    }
    let teacher = g.detach(teacher);
    let d = g.sub(student, teacher)?;
    let sq = g.mul(d, d)?;
    Ok(g.reduce_mean(sq))
}
