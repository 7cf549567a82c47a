//! Self-verification: engine vs. brute-force oracle, analytic vs. numeric
//! gradients, and the structural invariants of the loss stack and training
//! loop.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tempdistill_core::autodiff::{Graph, GradientFault, OpKind, Parameterized, RandomSource, Tensor, Var};
use tempdistill_core::distill::losses::{
    dc_loss, rc_bev_loss, rc_pv_loss, spatial_reconstruction_loss, trd_loss, tsa_aggregate_nodes,
};
use tempdistill_core::distill::{
    generate_features, generate_mask, tsa_aggregate, tsa_attention_weights, Component, DistillConfig,
    DistillSettings, FeatureSet, FrameMode, Generator, GeneratorKind, GeneratorVars, PvFeatureSet,
};
use tempdistill_core::scene::{
    generate_scene, observe, task_loss, task_loss_node, QueryLayout, QueryState, Role, SceneSample, SensorConfig,
    ToyDecoder, ToyEncoder, FRAME_INTERVAL,
};
use tempdistill_oracle::{
    finite_diff_grad, oracle_forward, relative_error, Array, GradCheckReport, OracleOp, DEFAULT_STEP,
    DEFAULT_TOLERANCE,
};

use crate::config::{TrainConfig, TrainSettings};
use crate::error::{HarnessError, Result};
use crate::train::{build_data, prepare_teacher, train_distill_with_teacher, RunReport};

/// Absolute agreement required between engine and oracle forward values.
pub const EQUIVALENCE_TOLERANCE: f64 = 1e-10;
pub const EQUIVALENCE_INSTANCES: usize = 100;
/// Random instances folded into each gradient report.
pub const GRADCHECK_INSTANCES: usize = 3;
/// Pre-activations closer than this to a ReLU or abs kink are redrawn.
pub const KINK_MARGIN: f64 = 1e-3;
pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckCategory {
    OracleEquivalence,
    Gradient,
    Invariant,
}

/// One named check. `tolerance` bounds `max_rel_error` for gradient checks
/// and `max_abs_error` otherwise. Non-finite errors are stored as `f64::MAX`
/// so the file stays valid JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub category: CheckCategory,
    pub name: String,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub instances: usize,
}

impl CheckResult {
    fn measured(category: CheckCategory, name: &str, abs: f64, rel: f64, tolerance: f64, instances: usize) -> Self {
        let (abs, rel) = (finite_or_max(abs), finite_or_max(rel));
        let passed = match category {
            CheckCategory::Gradient => rel < tolerance,
            _ => abs <= tolerance,
        };
        CheckResult { category, name: name.to_string(), max_abs_error: abs, max_rel_error: rel, tolerance, passed, instances }
    }

    fn from_gradcheck(r: &GradCheckReport, instances: usize) -> Self {
        CheckResult::measured(CheckCategory::Gradient, &r.name, r.max_abs_error, r.max_rel_error, r.tolerance, instances)
    }
}

fn finite_or_max(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::MAX
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub passed: bool,
    pub seed: u64,
    /// Operation whose backward pass was deliberately corrupted, if any.
    pub injected_fault: Option<String>,
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub fault: Option<GradientFault>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { seed: DEFAULT_SEED, fault: None }
    }
}

/// Fault kinds accepted on the command line. `conv` means the 2D kernel.
pub fn parse_fault_kind(name: &str) -> Option<OpKind> {
    Some(match name {
        "conv" | "conv2d" => OpKind::Conv2d,
        "conv1d" => OpKind::Conv1d,
        "matmul" => OpKind::MatMul,
        "transpose" => OpKind::Transpose,
        "softmax_rows" => OpKind::SoftmaxRows,
        "log_softmax_rows" => OpKind::LogSoftmaxRows,
        "relu" => OpKind::Relu,
        "tanh" => OpKind::Tanh,
        "abs" => OpKind::Abs,
        "add" => OpKind::Add,
        "sub" => OpKind::Sub,
        "mul" => OpKind::Mul,
        "scale" => OpKind::Scale,
        "add_bias" => OpKind::AddBias,
        "reduce_mean" => OpKind::ReduceMean,
        "reshape" => OpKind::Reshape,
        "frame" => OpKind::Frame,
        "stack" => OpKind::Stack,
        "gather_rows" => OpKind::GatherRows,
        _ => return None,
    })
}

/// Runs all three check families. The report is returned even when checks
/// fail; callers decide how to surface failures.
pub fn run_verification_suite(opts: &VerifyOptions) -> Result<VerificationReport> {
    let mut checks = oracle_equivalence(opts.seed)?;
    checks.extend(
        gradcheck_all_with_fault(opts.seed, &GradOp::ALL, opts.fault)?
            .iter()
            .map(|r| CheckResult::from_gradcheck(r, GRADCHECK_INSTANCES)),
    );
    checks.extend(invariant_checks(opts.seed)?);
    Ok(VerificationReport {
        passed: checks.iter().all(|c| c.passed),
        seed: opts.seed,
        injected_fault: opts.fault.map(|f| format!("{:?}", f.kind)),
        checks,
    })
}

// ---------------------------------------------------------------------------
// Oracle equivalence

fn arr(t: &Tensor) -> Array {
    Array::new(t.shape().to_vec(), t.data().to_vec())
}

fn dim(rng: &mut RandomSource, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

fn rand(shape: &[usize], rng: &mut RandomSource) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Generator with random weights and random (nonzero) biases.
fn rand_generator(kind: GeneratorKind, c: usize, rng: &mut RandomSource) -> Generator {
    let ks: Vec<usize> = match kind {
        GeneratorKind::Bev => vec![c, c, 3],
        GeneratorKind::Pv => vec![c, c, 3, 3],
    };
    Generator::from_parts(kind, rand(&ks, rng), rand(&[c], rng), rand(&ks, rng), rand(&[c], rng))
        .expect("shapes built to match")
}

fn gen_arrays(g: &Generator) -> Vec<Array> {
    g.tensors().into_iter().map(arr).collect()
}

fn truth_scene(rows: &Tensor) -> SceneSample {
    SceneSample {
        seed: 0,
        frames: 1,
        frame_interval: FRAME_INTERVAL,
        objects: Vec::new(),
        ego_motion: vec![[0.0, 0.0]],
        ground_truth: rows
            .data()
            .chunks(4)
            .map(|r| QueryState { x: r[0], y: r[1], z: 0.0, w: 1.0, l: 1.0, h: 1.0, yaw: 0.0, vx: r[2], vy: r[3] })
            .collect(),
    }
}

fn graph_scalar(build: impl FnOnce(&mut Graph) -> tempdistill_core::Result<Var>) -> Result<Tensor> {
    let mut g = Graph::new();
    let v = build(&mut g)?;
    Ok(g.value(v).clone())
}

/// One random instance: oracle inputs and the engine's answer.
fn equivalence_instance(op: OracleOp, rng: &mut RandomSource) -> Result<(Vec<Array>, Tensor)> {
    Ok(match op {
        OracleOp::MatMul => {
            let (m, k, n) = (dim(rng, 1, 4), dim(rng, 1, 4), dim(rng, 1, 4));
            let (a, b) = (rand(&[m, k], rng), rand(&[k, n], rng));
            let out = graph_scalar(|g| {
                let (a, b) = (g.constant(a.clone()), g.constant(b.clone()));
                g.matmul(a, b)
            })?;
            (vec![arr(&a), arr(&b)], out)
        }
        OracleOp::Transpose | OracleOp::SoftmaxRows | OracleOp::LogSoftmaxRows => {
            let x = Tensor::uniform(&[dim(rng, 1, 5), dim(rng, 1, 5)], -4.0, 4.0, rng);
            let out = graph_scalar(|g| {
                let v = g.constant(x.clone());
                match op {
                    OracleOp::Transpose => g.transpose(v),
                    OracleOp::SoftmaxRows => g.softmax_rows(v),
                    _ => g.log_softmax_rows(v),
                }
            })?;
            (vec![arr(&x)], out)
        }
        OracleOp::Relu | OracleOp::Tanh | OracleOp::ReduceMean => {
            let rank = dim(rng, 1, 3);
            let shape: Vec<usize> = (0..rank).map(|_| dim(rng, 1, 4)).collect();
            let x = Tensor::uniform(&shape, -3.0, 3.0, rng);
            let out = graph_scalar(|g| {
                let v = g.constant(x.clone());
                Ok(match op {
                    OracleOp::Relu => g.relu(v),
                    OracleOp::Tanh => g.tanh(v),
                    _ => g.reduce_mean(v),
                })
            })?;
            (vec![arr(&x)], out)
        }
        OracleOp::Conv1dSame3 => {
            let (ci, co, len) = (dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 6));
            let (x, w, b) = (rand(&[ci, len], rng), rand(&[co, ci, 3], rng), rand(&[co], rng));
            let out = graph_scalar(|g| {
                let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
                g.conv1d_same3(xv, wv, bv)
            })?;
            (vec![arr(&x), arr(&w), arr(&b)], out)
        }
        OracleOp::Conv2dSame3 => {
            let (ci, co, h, wd) = (dim(rng, 1, 2), dim(rng, 1, 2), dim(rng, 1, 5), dim(rng, 1, 5));
            let (x, w, b) = (rand(&[ci, h, wd], rng), rand(&[co, ci, 3, 3], rng), rand(&[co], rng));
            let out = graph_scalar(|g| {
                let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
                g.conv2d_same3(xv, wv, bv)
            })?;
            (vec![arr(&x), arr(&w), arr(&b)], out)
        }
        OracleOp::Add | OracleOp::Sub | OracleOp::Mul => {
            let shape = [dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 3)];
            let a = rand(&shape, rng);
            // Half of the products use the trailing-channel mask broadcast.
            let b = if op == OracleOp::Mul && rng.uniform() < 0.5 {
                Tensor::from_fn(&shape[..2], |_| if rng.uniform() < 0.5 { 0.0 } else { 1.0 })
            } else {
                rand(&shape, rng)
            };
            let out = graph_scalar(|g| {
                let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
                match op {
                    OracleOp::Add => g.add(av, bv),
                    OracleOp::Sub => g.sub(av, bv),
                    _ => g.mul(av, bv),
                }
            })?;
            (vec![arr(&a), arr(&b)], out)
        }
        OracleOp::Scale => {
            let a = rand(&[dim(rng, 1, 4), dim(rng, 1, 4)], rng);
            let s = rng.range(-3.0, 3.0);
            let out = graph_scalar(|g| {
                let v = g.constant(a.clone());
                Ok(g.scale(v, s))
            })?;
            (vec![arr(&a), Array::scalar(s)], out)
        }
        OracleOp::TsaAggregate => {
            let t_tea = dim(rng, 1, 4);
            let t_stu = dim(rng, 1, t_tea);
            let f = rand(&[t_tea, dim(rng, 1, 4), dim(rng, 1, 3)], rng);
            let out = tsa_aggregate(&FeatureSet::new(f.clone())?, t_stu)?.into_values();
            (vec![arr(&f), Array::scalar(t_stu as f64)], out)
        }
        OracleOp::TsaAggregateSwapped => unreachable!("no engine counterpart"),
        OracleOp::Generator1d => {
            let (nq, c) = (dim(rng, 1, 5), dim(rng, 1, 3));
            let x = rand(&[nq, c], rng);
            let gen = rand_generator(GeneratorKind::Bev, c, rng);
            let out = generate_features(&x.reshape(&[1, nq, c])?, &gen)?.reshape(&[nq, c])?;
            let mut inputs = vec![arr(&x)];
            inputs.extend(gen_arrays(&gen));
            (inputs, out)
        }
        OracleOp::Generator2d => {
            let (c, h, w) = (dim(rng, 1, 2), dim(rng, 1, 4), dim(rng, 1, 4));
            let x = rand(&[c, h, w], rng);
            let gen = rand_generator(GeneratorKind::Pv, c, rng);
            let out = generate_features(&x.reshape(&[1, c, h, w])?, &gen)?.reshape(&[c, h, w])?;
            let mut inputs = vec![arr(&x)];
            inputs.extend(gen_arrays(&gen));
            (inputs, out)
        }
        OracleOp::RcBevLoss => {
            let t_tea = dim(rng, 1, 4);
            let t_stu = dim(rng, 1, t_tea);
            let (nq, c) = (dim(rng, 1, 4), dim(rng, 1, 3));
            let student = rand(&[t_stu, nq, c], rng);
            let teacher = FeatureSet::new(rand(&[t_tea, nq, c], rng))?;
            let gen = rand_generator(GeneratorKind::Bev, c, rng);
            let mask = generate_mask(&[t_stu, nq], 0.5, rng.next_u64())?;
            let out = graph_scalar(|g| {
                let s = g.constant(student.clone());
                let gv = gen.bind_frozen_vars(g);
                rc_bev_loss(g, s, &teacher, &gv, &mask)
            })?;
            let mut inputs = vec![arr(&student), arr(teacher.values()), arr(&mask.mask)];
            inputs.extend(gen_arrays(&gen));
            (inputs, out)
        }
        OracleOp::RcPvLoss | OracleOp::SpatialReconstructionLoss => {
            let t_tea = dim(rng, 1, 3);
            let t_stu = dim(rng, 1, t_tea);
            let (c, h, w) = (dim(rng, 1, 2), dim(rng, 3, 4), dim(rng, 3, 4));
            let student = rand(&[t_stu, c, h, w], rng);
            let level = if op == OracleOp::RcPvLoss { 3 } else { dim(rng, 0, 2) as u8 };
            let teacher = PvFeatureSet::new(rand(&[t_tea, c, h, w], rng), level)?;
            let gen = rand_generator(GeneratorKind::Pv, c, rng);
            let mask = generate_mask(&[t_stu, h, w], 0.5, rng.next_u64())?;
            let out = graph_scalar(|g| {
                let s = g.constant(student.clone());
                let gv = gen.bind_frozen_vars(g);
                if op == OracleOp::RcPvLoss {
                    rc_pv_loss(g, s, &teacher, &gv, &mask)
                } else {
                    spatial_reconstruction_loss(g, s, &teacher, &gv, &mask)
                }
            })?;
            let mut inputs = vec![arr(&student), arr(teacher.values()), arr(&mask.mask)];
            inputs.extend(gen_arrays(&gen));
            (inputs, out)
        }
        OracleOp::Similarity => {
            let t = dim(rng, 2, 4);
            let f = FeatureSet::new(rand(&[t, dim(rng, 1, 4), dim(rng, 1, 3)], rng))?;
            let i = rng.below(t);
            let j = (i + 1 + rng.below(t - 1)) % t;
            let out = f.similarity(i, j)?.values;
            (vec![arr(f.values()), Array::scalar(i as f64), Array::scalar(j as f64)], out)
        }
        OracleOp::TrdLoss => {
            let shape = [dim(rng, 1, 4), dim(rng, 1, 4), dim(rng, 1, 3)];
            let (s, t) = (rand(&shape, rng), rand(&shape, rng));
            let tau = rng.range(0.2, 2.0);
            let out = graph_scalar(|g| {
                let (sv, tv) = (g.constant(s.clone()), g.constant(t.clone()));
                trd_loss(g, sv, tv, tau)
            })?;
            (vec![arr(&s), arr(&t), Array::scalar(tau)], out)
        }
        OracleOp::DcLoss => {
            let shape = [dim(rng, 1, 5), dim(rng, 1, 4)];
            let (s, t) = (rand(&shape, rng), rand(&shape, rng));
            let out = graph_scalar(|g| {
                let (sv, tv) = (g.constant(s.clone()), g.constant(t.clone()));
                dc_loss(g, sv, tv)
            })?;
            (vec![arr(&s), arr(&t)], out)
        }
        OracleOp::TaskLoss => {
            let preds = Tensor::uniform(&[dim(rng, 1, 6), 4], -10.0, 10.0, rng);
            let truth = Tensor::uniform(&[dim(rng, 1, 4), 4], -10.0, 10.0, rng);
            let out = Tensor::scalar(task_loss(&preds, &truth_scene(&truth))?);
            (vec![arr(&preds), arr(&truth)], out)
        }
    })
}

/// Oracle operations with an engine counterpart. The swapped aggregation is
/// an alternative reading kept only to show the engine does not follow it.
pub fn equivalence_ops() -> Vec<OracleOp> {
    OracleOp::ALL.into_iter().filter(|&op| op != OracleOp::TsaAggregateSwapped).collect()
}

fn equivalence_check(op: OracleOp, seed: u64, instances: usize) -> Result<CheckResult> {
    let mut rng = RandomSource::new(RandomSource::derive(seed, op as u64));
    let (mut max_abs, mut max_rel) = (0.0f64, 0.0f64);
    for _ in 0..instances {
        let (inputs, engine) = equivalence_instance(op, &mut rng)?;
        let oracle = oracle_forward(op, &inputs).map_err(|e| HarnessError::Format(e.to_string()))?;
        if oracle.data.len() != engine.len() {
            max_abs = f64::INFINITY;
            continue;
        }
        for (a, b) in engine.data().iter().zip(&oracle.data) {
            let d = (a - b).abs();
            max_abs = max_abs.max(if d.is_nan() { f64::INFINITY } else { d });
            max_rel = max_rel.max(relative_error(*a, *b));
        }
    }
    Ok(CheckResult::measured(
        CheckCategory::OracleEquivalence,
        op.name(),
        max_abs,
        max_rel,
        EQUIVALENCE_TOLERANCE,
        instances,
    ))
}

pub fn oracle_equivalence(seed: u64) -> Result<Vec<CheckResult>> {
    equivalence_ops().par_iter().map(|&op| equivalence_check(op, seed, EQUIVALENCE_INSTANCES)).collect()
}

// ---------------------------------------------------------------------------
// Gradient checks

/// Every differentiable primitive plus every composite built from them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GradOp {
    MatMul,
    Transpose,
    SoftmaxRows,
    LogSoftmaxRows,
    Relu,
    Tanh,
    Abs,
    Conv1dSame3,
    Conv2dSame3,
    Add,
    Sub,
    Mul,
    MaskMul,
    Scale,
    AddBias,
    ReduceMean,
    Reshape,
    Frame,
    Stack,
    GatherRows,
    TsaAggregate,
    Generator1d,
    Generator2d,
    RcBevLoss,
    RcPvLoss,
    SpatialReconstructionLoss,
    Similarity,
    TrdLoss,
    DcLoss,
    TaskLoss,
    ToyEncoder,
    ToyDecoder,
}

impl GradOp {
    pub const ALL: [GradOp; 32] = [
        GradOp::MatMul,
        GradOp::Transpose,
        GradOp::SoftmaxRows,
        GradOp::LogSoftmaxRows,
        GradOp::Relu,
        GradOp::Tanh,
        GradOp::Abs,
        GradOp::Conv1dSame3,
        GradOp::Conv2dSame3,
        GradOp::Add,
        GradOp::Sub,
        GradOp::Mul,
        GradOp::MaskMul,
        GradOp::Scale,
        GradOp::AddBias,
        GradOp::ReduceMean,
        GradOp::Reshape,
        GradOp::Frame,
        GradOp::Stack,
        GradOp::GatherRows,
        GradOp::TsaAggregate,
        GradOp::Generator1d,
        GradOp::Generator2d,
        GradOp::RcBevLoss,
        GradOp::RcPvLoss,
        GradOp::SpatialReconstructionLoss,
        GradOp::Similarity,
        GradOp::TrdLoss,
        GradOp::DcLoss,
        GradOp::TaskLoss,
        GradOp::ToyEncoder,
        GradOp::ToyDecoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradOp::MatMul => "matmul",
            GradOp::Transpose => "transpose",
            GradOp::SoftmaxRows => "softmax_rows",
            GradOp::LogSoftmaxRows => "log_softmax_rows",
            GradOp::Relu => "relu",
            GradOp::Tanh => "tanh",
            GradOp::Abs => "abs",
            GradOp::Conv1dSame3 => "conv1d_same3",
            GradOp::Conv2dSame3 => "conv2d_same3",
            GradOp::Add => "add",
            GradOp::Sub => "sub",
            GradOp::Mul => "mul",
            GradOp::MaskMul => "mask_mul",
            GradOp::Scale => "scale",
            GradOp::AddBias => "add_bias",
            GradOp::ReduceMean => "reduce_mean",
            GradOp::Reshape => "reshape",
            GradOp::Frame => "frame",
            GradOp::Stack => "stack",
            GradOp::GatherRows => "gather_rows",
            GradOp::TsaAggregate => "tsa_aggregate",
            GradOp::Generator1d => "generator_1d",
            GradOp::Generator2d => "generator_2d",
            GradOp::RcBevLoss => "rc_bev_loss",
            GradOp::RcPvLoss => "rc_pv_loss",
            GradOp::SpatialReconstructionLoss => "spatial_reconstruction_loss",
            GradOp::Similarity => "similarity",
            GradOp::TrdLoss => "trd_loss",
            GradOp::DcLoss => "dc_loss",
            GradOp::TaskLoss => "task_loss",
            GradOp::ToyEncoder => "toy_encoder",
            GradOp::ToyDecoder => "toy_decoder",
        }
    }
}

impl fmt::Display for GradOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

type Builder<'a> = Box<dyn Fn(&mut Graph, &[Var]) -> tempdistill_core::Result<Var> + Sync + 'a>;

/// Analytic gradients (optionally corrupted by `fault`) against central
/// differences for every input of the scalar built by `build`.
fn gradcheck(
    name: &str,
    inputs: &[Tensor],
    fault: Option<GradientFault>,
    build: &(dyn Fn(&mut Graph, &[Var]) -> tempdistill_core::Result<Var> + Sync),
) -> Result<GradCheckReport> {
    let mut g = fault.map(Graph::with_fault).unwrap_or_default();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let mut report: Option<GradCheckReport> = None;
    for (i, input) in inputs.iter().enumerate() {
        let mut failure = None;
        let numeric = finite_diff_grad(
            |x| {
                let mut g = Graph::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        if j == i {
                            g.param(Tensor::from_fn(t.shape(), |k| x[k]))
                        } else {
                            g.param(t.clone())
                        }
                    })
                    .collect();
                match build(&mut g, &vars) {
                    Ok(l) => g.value(l).item(),
                    Err(e) => {
                        failure = Some(e);
                        f64::NAN
                    }
                }
            },
            input.data(),
            DEFAULT_STEP,
        );
        if let Some(e) = failure {
            return Err(e.into());
        }
        let r = GradCheckReport::compare(name, grads.wrt(vars[i]).data(), &numeric, DEFAULT_TOLERANCE);
        match &mut report {
            Some(acc) => acc.merge(&r),
            None => report = Some(r),
        }
    }
    Ok(report.expect("every check has at least one input"))
}

/// Reduces a tensor node to a scalar through a fixed random direction so
/// every entry contributes.
fn project(g: &mut Graph, v: Var, rng_seed: u64) -> tempdistill_core::Result<Var> {
    let mut rng = RandomSource::new(rng_seed);
    let w = Tensor::uniform(g.value(v).shape(), -1.0, 1.0, &mut rng);
    let w = g.constant(w);
    let p = g.mul(v, w)?;
    Ok(g.reduce_mean(p))
}

fn away_from_zero(shape: &[usize], rng: &mut RandomSource) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.range(0.1, 1.0);
        if rng.uniform() < 0.5 {
            -m
        } else {
            m
        }
    })
}

fn gen_vars(kind: GeneratorKind, v: &[Var]) -> GeneratorVars {
    GeneratorVars { kind, w1: v[0], b1: v[1], w2: v[2], b2: v[3] }
}

/// True when no hidden ReLU pre-activation of `gen` on `masked` lies within
/// the kink margin.
fn hidden_clear(gen: &Generator, masked: &Tensor) -> Result<bool> {
    let mut g = Graph::new();
    let x = g.constant(masked.clone());
    let gv = gen.bind_frozen_vars(&mut g);
    let (_, hidden) = gv.generate_with_hidden(&mut g, x)?;
    Ok(hidden.iter().all(|&h| g.value(h).data().iter().all(|v| v.abs() > KINK_MARGIN)))
}

/// Redraws student features, generator and mask until the generator's ReLU
/// stays clear of its kink. `mask_shape` is empty for no mask.
fn clear_generator_draw(
    kind: GeneratorKind,
    shape: &[usize],
    mask_shape: &[usize],
    rng: &mut RandomSource,
) -> Result<(Tensor, Generator, Option<tempdistill_core::distill::MaskPlan>)> {
    let c = if kind == GeneratorKind::Bev { shape[2] } else { shape[1] };
    loop {
        let x = rand(shape, rng);
        let gen = rand_generator(kind, c, rng);
        let mask = if mask_shape.is_empty() {
            None
        } else {
            Some(generate_mask(mask_shape, 0.5, rng.next_u64())?)
        };
        let masked = match &mask {
            None => x.clone(),
            Some(m) if kind == GeneratorKind::Bev => Tensor::from_fn(shape, |i| x.data()[i] * m.mask.data()[i / shape[2]]),
            Some(m) => {
                let full = m.expand_over_channels(c)?;
                Tensor::from_fn(shape, |i| x.data()[i] * full.data()[i])
            }
        };
        if hidden_clear(&gen, &masked)? {
            return Ok((x, gen, mask));
        }
    }
}

/// Predictions whose matching and L1 signs are stable under the
/// finite-difference step.
fn stable_task_draw(rng: &mut RandomSource) -> (Tensor, SceneSample) {
    loop {
        let preds = Tensor::uniform(&[5, 4], -5.0, 5.0, rng);
        let truth = Tensor::uniform(&[3, 4], -5.0, 5.0, rng);
        let scene = truth_scene(&truth);
        let p = preds.data();
        let stable = scene.ground_truth.iter().all(|gt| {
            let mut d: Vec<f64> = (0..5).map(|q| (p[q * 4] - gt.x).powi(2) + (p[q * 4 + 1] - gt.y).powi(2)).collect();
            d.sort_by(f64::total_cmp);
            d[1] - d[0] > 1e-2
        });
        let matched = tempdistill_core::scene::match_objects(&preds, &scene).expect("shape is Nq×4");
        let clear = scene.ground_truth.iter().zip(&matched).all(|(gt, &q)| {
            [gt.x, gt.y, gt.vx, gt.vy].iter().enumerate().all(|(k, v)| (p[q * 4 + k] - v).abs() > KINK_MARGIN)
        });
        if stable && clear {
            return (preds, scene);
        }
    }
}

/// Inputs and scalar builder for one random instance of `op`.
fn grad_instance<'a>(op: GradOp, rng: &mut RandomSource) -> Result<(Vec<Tensor>, Builder<'a>)> {
    let proj_seed = rng.next_u64();
    let projected = move |f: fn(&mut Graph, &[Var]) -> tempdistill_core::Result<Var>| -> Builder<'a> {
        Box::new(move |g: &mut Graph, v: &[Var]| {
            let out = f(g, v)?;
            project(g, out, proj_seed)
        })
    };
    Ok(match op {
        GradOp::MatMul => (vec![rand(&[3, 4], rng), rand(&[4, 2], rng)], projected(|g, v| g.matmul(v[0], v[1]))),
        GradOp::Transpose => (vec![rand(&[3, 2], rng)], projected(|g, v| g.transpose(v[0]))),
        GradOp::SoftmaxRows => (vec![rand(&[3, 4], rng)], projected(|g, v| g.softmax_rows(v[0]))),
        GradOp::LogSoftmaxRows => (vec![rand(&[3, 4], rng)], projected(|g, v| g.log_softmax_rows(v[0]))),
        GradOp::Relu => (vec![away_from_zero(&[3, 4], rng)], projected(|g, v| Ok(g.relu(v[0])))),
        GradOp::Tanh => (vec![rand(&[3, 4], rng)], projected(|g, v| Ok(g.tanh(v[0])))),
        GradOp::Abs => (vec![away_from_zero(&[3, 4], rng)], projected(|g, v| Ok(g.abs(v[0])))),
        GradOp::Conv1dSame3 => (
            vec![rand(&[2, 5], rng), rand(&[3, 2, 3], rng), rand(&[3], rng)],
            projected(|g, v| g.conv1d_same3(v[0], v[1], v[2])),
        ),
        GradOp::Conv2dSame3 => (
            vec![rand(&[2, 4, 3], rng), rand(&[2, 2, 3, 3], rng), rand(&[2], rng)],
            projected(|g, v| g.conv2d_same3(v[0], v[1], v[2])),
        ),
        GradOp::Add => (vec![rand(&[2, 3], rng), rand(&[2, 3], rng)], projected(|g, v| g.add(v[0], v[1]))),
        GradOp::Sub => (vec![rand(&[2, 3], rng), rand(&[2, 3], rng)], projected(|g, v| g.sub(v[0], v[1]))),
        GradOp::Mul => (vec![rand(&[2, 3], rng), rand(&[2, 3], rng)], projected(|g, v| g.mul(v[0], v[1]))),
        GradOp::MaskMul => (vec![rand(&[2, 3, 2], rng), rand(&[2, 3], rng)], projected(|g, v| g.mul(v[0], v[1]))),
        GradOp::Scale => (vec![rand(&[2, 3], rng)], projected(|g, v| Ok(g.scale(v[0], -1.7)))),
        GradOp::AddBias => (vec![rand(&[3, 2], rng), rand(&[2], rng)], projected(|g, v| g.add_bias(v[0], v[1]))),
        GradOp::ReduceMean => (vec![rand(&[3, 3], rng)], Box::new(|g: &mut Graph, v: &[Var]| Ok(g.reduce_mean(v[0])))),
        GradOp::Reshape => (vec![rand(&[2, 6], rng)], projected(|g, v| g.reshape(v[0], &[3, 2, 2]))),
        GradOp::Frame => (vec![rand(&[3, 2, 2], rng)], projected(|g, v| g.frame(v[0], 1))),
        GradOp::Stack => (vec![rand(&[2, 3], rng), rand(&[2, 3], rng)], projected(|g, v| g.stack(&[v[1], v[0], v[1]]))),
        GradOp::GatherRows => (vec![rand(&[4, 3], rng)], projected(|g, v| g.gather_rows(v[0], &[2, 0, 2, 3]))),
        GradOp::TsaAggregate => {
            (vec![rand(&[3, 3, 2], rng)], projected(|g, v| Ok(tsa_aggregate_nodes(g, v[0], 2)?.aggregate)))
        }
        GradOp::Generator1d | GradOp::Generator2d => {
            let (kind, shape): (GeneratorKind, &[usize]) = if op == GradOp::Generator1d {
                (GeneratorKind::Bev, &[2, 4, 2])
            } else {
                (GeneratorKind::Pv, &[1, 2, 3, 3])
            };
            let (x, gen, _) = clear_generator_draw(kind, shape, &[], rng)?;
            let mut inputs = vec![x];
            inputs.extend(gen.tensors().into_iter().cloned());
            let b: Builder<'a> = Box::new(move |g: &mut Graph, v: &[Var]| {
                let out = gen_vars(kind, &v[1..]).generate(g, v[0])?;
                project(g, out, proj_seed)
            });
            (inputs, b)
        }
        GradOp::RcBevLoss => {
            let (x, gen, mask) = clear_generator_draw(GeneratorKind::Bev, &[2, 4, 2], &[2, 4], rng)?;
            let mask = mask.expect("mask requested");
            let teacher = FeatureSet::new(rand(&[3, 4, 2], rng))?;
            let mut inputs = vec![x];
            inputs.extend(gen.tensors().into_iter().cloned());
            let b: Builder<'a> = Box::new(move |g: &mut Graph, v: &[Var]| {
                rc_bev_loss(g, v[0], &teacher, &gen_vars(GeneratorKind::Bev, &v[1..]), &mask)
            });
            (inputs, b)
        }
        GradOp::RcPvLoss | GradOp::SpatialReconstructionLoss => {
            let (x, gen, mask) = clear_generator_draw(GeneratorKind::Pv, &[2, 2, 3, 3], &[2, 3, 3], rng)?;
            let mask = mask.expect("mask requested");
            let level = if op == GradOp::RcPvLoss { 3 } else { 2 };
            let teacher = PvFeatureSet::new(rand(&[3, 2, 3, 3], rng), level)?;
            let mut inputs = vec![x];
            inputs.extend(gen.tensors().into_iter().cloned());
            let b: Builder<'a> = Box::new(move |g: &mut Graph, v: &[Var]| {
                let gv = gen_vars(GeneratorKind::Pv, &v[1..]);
                if op == GradOp::RcPvLoss {
                    rc_pv_loss(g, v[0], &teacher, &gv, &mask)
                } else {
                    spatial_reconstruction_loss(g, v[0], &teacher, &gv, &mask)
                }
            });
            (inputs, b)
        }
        GradOp::Similarity => (
            vec![rand(&[3, 3, 2], rng)],
            projected(|g, v| tempdistill_core::distill::losses::similarity(g, v[0], 2, 0)),
        ),
        GradOp::TrdLoss => {
            let teacher = rand(&[3, 3, 2], rng);
            let b: Builder<'a> = Box::new(move |g: &mut Graph, v: &[Var]| {
                let t = g.constant(teacher.clone());
                trd_loss(g, v[0], t, 0.5)
            });
            (vec![rand(&[3, 3, 2], rng)], b)
        }
        GradOp::DcLoss => {
            let teacher = rand(&[4, 3], rng);
            let b: Builder<'a> = Box::new(move |g: &mut Graph, v: &[Var]| {
                let t = g.constant(teacher.clone());
                dc_loss(g, v[0], t)
            });
            (vec![rand(&[4, 3], rng)], b)
        }
        GradOp::TaskLoss => {
            let (preds, scene) = stable_task_draw(rng);
            let b: Builder<'a> = Box::new(move |g: &mut Graph, v: &[Var]| task_loss_node(g, v[0], &scene));
            (vec![preds], b)
        }
        GradOp::ToyEncoder => {
            let layout = QueryLayout::new(4, 3, 3)?;
            let scene = generate_scene(rng.next_u64(), 3, 2)?;
            let obs = observe(&scene, &layout, &SensorConfig::default());
            let mut enc = ToyEncoder::random(Role::Student, 2, 3, rng);
            // Random biases so their gradients are exercised off zero.
            for t in enc.tensors_mut() {
                if t.rank() == 1 {
                    *t = rand(t.shape(), rng);
                }
            }
            let inputs: Vec<Tensor> = enc.tensors().into_iter().cloned().collect();
            let b: Builder<'a> = Box::new(move |g: &mut Graph, v: &[Var]| {
                let out = enc.forward(g, v, &obs, 2)?;
                let a = project(g, out.bev, proj_seed)?;
                let b = project(g, out.pv_final, proj_seed ^ 1)?;
                let c = project(g, out.pv_spatial, proj_seed ^ 2)?;
                let ab = g.add(a, b)?;
                g.add(ab, c)
            });
            (inputs, b)
        }
        GradOp::ToyDecoder => {
            let layout = QueryLayout::new(4, 3, 3)?;
            let mut dec = ToyDecoder::random(3, layout.anchors(), rng);
            for t in dec.tensors_mut() {
                if t.rank() == 1 {
                    *t = rand(t.shape(), rng);
                }
            }
            let mut inputs = vec![rand(&[2, 4, 3], rng)];
            inputs.extend(dec.tensors().into_iter().cloned());
            let b: Builder<'a> = Box::new(move |g: &mut Graph, v: &[Var]| {
                let out = dec.forward(g, &v[1..], v[0])?;
                let a = project(g, out.decoded, proj_seed)?;
                let b = project(g, out.predictions, proj_seed ^ 1)?;
                g.add(a, b)
            });
            (inputs, b)
        }
    })
}

/// One report per op in `ops`, each folding `GRADCHECK_INSTANCES` random
/// instances. Deterministic given `seed`.
pub fn gradcheck_all(seed: u64, ops: &[GradOp]) -> Result<Vec<GradCheckReport>> {
    gradcheck_all_with_fault(seed, ops, None)
}

/// As [`gradcheck_all`], with the backward pass of `fault.kind` corrupted
/// on the analytic side.
pub fn gradcheck_all_with_fault(
    seed: u64,
    ops: &[GradOp],
    fault: Option<GradientFault>,
) -> Result<Vec<GradCheckReport>> {
    ops.par_iter()
        .map(|&op| {
            let mut rng = RandomSource::new(RandomSource::derive(seed, 0x9c00 | op as u64));
            let mut report: Option<GradCheckReport> = None;
            for _ in 0..GRADCHECK_INSTANCES {
                let (inputs, build) = grad_instance(op, &mut rng)?;
                let r = gradcheck(op.name(), &inputs, fault, build.as_ref())?;
                match &mut report {
                    Some(acc) => acc.merge(&r),
                    None => report = Some(r),
                }
            }
            Ok(report.expect("at least one instance"))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Invariants

fn invariant(name: &str, error: f64, tolerance: f64, instances: usize) -> CheckResult {
    CheckResult::measured(CheckCategory::Invariant, name, error, 0.0, tolerance, instances)
}

/// Smallest configuration that still exercises every training path.
pub fn tiny_config(student_frames: usize, teacher_frames: usize) -> Result<TrainConfig> {
    TrainConfig::from_settings(TrainSettings {
        epochs: Some(2),
        teacher_epochs: Some(2),
        batch_size: Some(2),
        train_scenes: Some(4),
        heldout_scenes: Some(2),
        objects: Some(2),
        distill: DistillSettings {
            student_frames: Some(student_frames),
            teacher_frames: Some(teacher_frames),
            queries: Some(4),
            channels: Some(3),
            height: Some(3),
            width: Some(3),
            ..DistillSettings::default()
        },
        ..TrainSettings::default()
    })
}

/// Worst gap between a logged total and task plus weighted components, and
/// between each weighted component and `α · raw`, over every step and epoch.
pub fn bookkeeping_error(report: &RunReport) -> f64 {
    let m = &report.metrics;
    let records = m.steps.iter().map(|s| &s.losses).chain(m.epochs.iter().map(|e| &e.losses));
    let mut worst = 0.0f64;
    for r in records {
        let sum: f64 = r.task + r.weighted.values().sum::<f64>();
        worst = worst.max((r.total - sum).abs());
        for c in Component::ALL {
            if let (Some(raw), Some(w)) = (r.components.get(c.name()), r.weighted.get(c.name())) {
                worst = worst.max((m.weights.get(c) * raw - w).abs());
            }
        }
    }
    worst
}

/// Number of loss records that mention a component the run's mode forbids,
/// or omit one it weights.
pub fn gating_violations(report: &RunReport) -> usize {
    let m = &report.metrics;
    let records = m.steps.iter().map(|s| &s.losses).chain(m.epochs.iter().map(|e| &e.losses));
    records
        .filter(|r| {
            Component::ALL.iter().any(|&c| {
                let present = r.components.contains_key(c.name()) || r.weighted.contains_key(c.name());
                let expected = m.mode.permits(c) && m.weights.get(c) != 0.0;
                present != expected
            })
        })
        .count()
}

fn invariant_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = RandomSource::new(RandomSource::derive(seed, 0x1a7));
    let mut out = Vec::new();
    let n = 100;

    // Softmax rows and temporal attention rows sum to one.
    let mut worst = 0.0f64;
    for _ in 0..n {
        let x = Tensor::uniform(&[dim(&mut rng, 1, 5), dim(&mut rng, 1, 6)], -20.0, 20.0, &mut rng);
        let y = graph_scalar(|g| {
            let v = g.constant(x.clone());
            g.softmax_rows(v)
        })?;
        for row in y.data().chunks(y.shape()[1]) {
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    out.push(invariant("softmax_rows_sum_to_one", worst, 1e-12, n));

    let mut worst = 0.0f64;
    for _ in 0..n {
        let t_tea = dim(&mut rng, 1, 4);
        let f = FeatureSet::new(rand(&[t_tea, dim(&mut rng, 1, 5), dim(&mut rng, 1, 3)], &mut rng))?;
        for w in tsa_attention_weights(&f, dim(&mut rng, 1, t_tea))? {
            for row in w.data().chunks(w.shape()[1]) {
                worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    out.push(invariant("attention_rows_sum_to_one", worst, 1e-12, n));

    // Permuting queries permutes the aggregate the same way.
    let mut worst = 0.0f64;
    for _ in 0..n {
        let (t_tea, nq, c) = (dim(&mut rng, 1, 4), dim(&mut rng, 2, 5), dim(&mut rng, 1, 3));
        let t_stu = dim(&mut rng, 1, t_tea);
        let f = rand(&[t_tea, nq, c], &mut rng);
        let mut perm: Vec<usize> = (0..nq).collect();
        for i in (1..nq).rev() {
            perm.swap(i, rng.below(i + 1));
        }
        let permute = |x: &Tensor, frames: usize| {
            Tensor::from_fn(&[frames, nq, c], |i| {
                let (t, q, ch) = (i / (nq * c), (i / c) % nq, i % c);
                x.data()[(t * nq + perm[q]) * c + ch]
            })
        };
        let base = tsa_aggregate(&FeatureSet::new(f.clone())?, t_stu)?.into_values();
        let moved = tsa_aggregate(&FeatureSet::new(permute(&f, t_tea))?, t_stu)?.into_values();
        worst = worst.max(moved.max_abs_diff(&permute(&base, t_stu)));
    }
    out.push(invariant("tsa_permutation_equivariance", worst, 1e-12, n));

    // Losses are never negative; the minimum is recorded as the error.
    let mut lowest = 0.0f64;
    for _ in 0..n {
        let (t, nq, c) = (dim(&mut rng, 1, 3), dim(&mut rng, 1, 4), dim(&mut rng, 1, 3));
        let s = rand(&[t, nq, c], &mut rng);
        let teacher = FeatureSet::new(rand(&[t + 1, nq, c], &mut rng))?;
        let t2 = rand(&[t, nq, c], &mut rng);
        let gen = rand_generator(GeneratorKind::Bev, c, &mut rng);
        let pv_gen = rand_generator(GeneratorKind::Pv, c, &mut rng);
        let pv_s = rand(&[t, c, 3, 3], &mut rng);
        let pv_t = rand(&[t + 1, c, 3, 3], &mut rng);
        let mask = generate_mask(&[t, nq], 0.5, rng.next_u64())?;
        let pv_mask = generate_mask(&[t, 3, 3], 0.5, rng.next_u64())?;
        let values = [
            graph_scalar(|g| {
                let sv = g.constant(s.clone());
                let gv = gen.bind_frozen_vars(g);
                rc_bev_loss(g, sv, &teacher, &gv, &mask)
            })?,
            graph_scalar(|g| {
                let sv = g.constant(pv_s.clone());
                let gv = pv_gen.bind_frozen_vars(g);
                rc_pv_loss(g, sv, &PvFeatureSet::new(pv_t.clone(), 3)?, &gv, &pv_mask)
            })?,
            graph_scalar(|g| {
                let sv = g.constant(pv_s.clone());
                let gv = pv_gen.bind_frozen_vars(g);
                spatial_reconstruction_loss(g, sv, &PvFeatureSet::new(pv_t.clone(), 1)?, &gv, &pv_mask)
            })?,
            graph_scalar(|g| {
                let (a, b) = (g.constant(s.clone()), g.constant(t2.clone()));
                trd_loss(g, a, b, 0.5)
            })?,
            graph_scalar(|g| {
                let (a, b) = (g.constant(s.clone()), g.constant(t2.clone()));
                dc_loss(g, a, b)
            })?,
        ];
        for v in values {
            lowest = lowest.min(v.item());
        }
    }
    out.push(invariant("losses_nonnegative", if lowest < 0.0 { -lowest } else { 0.0 }, 0.0, n));

    out.extend(trivial_zero_checks(&mut rng)?);

    // Masks replay bit-identically from their seed.
    let mut mismatches = 0usize;
    for _ in 0..n {
        let shape = [dim(&mut rng, 1, 8), dim(&mut rng, 1, 64)];
        let (ratio, s) = (rng.uniform(), rng.next_u64());
        if generate_mask(&shape, ratio, s)? != generate_mask(&shape, ratio, s)? {
            mismatches += 1;
        }
    }
    out.push(invariant("mask_replay", mismatches as f64, 0.0, n));

    out.extend(training_checks(seed)?);
    Ok(out)
}

/// Each reconstruction and alignment loss is exactly zero on its equality
/// input; the relational loss on identical features is below 1e-12.
fn trivial_zero_checks(rng: &mut RandomSource) -> Result<Vec<CheckResult>> {
    let n = 20;
    let (mut bev, mut pv, mut spatial, mut dc, mut trd) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..n {
        let (t, nq, c) = (dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 3));
        // Identity generators pass nonnegative inputs through unchanged.
        let pos = Tensor::uniform(&[t, nq, c], 0.0, 1.0, rng);
        let keep = tempdistill_core::distill::MaskPlan::keep_all(&[t, nq])?;
        let id = Generator::identity(GeneratorKind::Bev, c);
        let v = graph_scalar(|g| {
            let s = g.constant(pos.clone());
            let gv = id.bind_frozen_vars(g);
            tempdistill_core::distill::losses::rc_bev_loss_to_target(g, s, &pos, &gv, &keep)
        })?;
        bev = bev.max(v.item().abs());

        let pos_pv = Tensor::uniform(&[t, c, 3, 3], 0.0, 1.0, rng);
        let keep_pv = tempdistill_core::distill::MaskPlan::keep_all(&[t, 3, 3])?;
        let id_pv = Generator::identity(GeneratorKind::Pv, c);
        let v = graph_scalar(|g| {
            let s = g.constant(pos_pv.clone());
            let gv = id_pv.bind_frozen_vars(g);
            tempdistill_core::distill::losses::pv_reconstruction_to_target(g, s, &pos_pv, &gv, &keep_pv)
        })?;
        pv = pv.max(v.item().abs());
        let same = PvFeatureSet::new(pos_pv.clone(), 1)?;
        let v = graph_scalar(|g| {
            let s = g.constant(pos_pv.clone());
            let gv = id_pv.bind_frozen_vars(g);
            spatial_reconstruction_loss(g, s, &same, &gv, &keep_pv)
        })?;
        spatial = spatial.max(v.item().abs());

        let f = rand(&[t, nq, c], rng);
        let v = graph_scalar(|g| {
            let (a, b) = (g.constant(f.clone()), g.constant(f.clone()));
            dc_loss(g, a, b)
        })?;
        dc = dc.max(v.item().abs());
        let v = graph_scalar(|g| {
            let (a, b) = (g.constant(f.clone()), g.constant(f.clone()));
            trd_loss(g, a, b, 0.5)
        })?;
        trd = trd.max(v.item().abs());
    }
    Ok(vec![
        invariant("rc_bev_zero_on_equal", bev, 0.0, n),
        invariant("rc_pv_zero_on_equal", pv, 0.0, n),
        invariant("spatial_reconstruction_zero_on_equal", spatial, 0.0, n),
        invariant("dc_zero_on_equal", dc, 0.0, n),
        invariant("trd_near_zero_on_identical", trd, 1e-12, n),
    ])
}

/// Checks that need a (tiny) training run: frozen teacher, bookkeeping,
/// gating in both modes, config rejection and determinism.
fn training_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let partial = tiny_config(2, 3)?.with_seed(seed)?;
    let full = tiny_config(3, 3)?.with_seed(seed)?;
    let data = build_data(&partial)?;
    let teacher = prepare_teacher(&partial, &data)?;
    let first = train_distill_with_teacher(&partial, &data, &teacher)?;
    let second = train_distill_with_teacher(&partial, &data, &teacher)?;
    let full_data = build_data(&full)?;
    let full_teacher = prepare_teacher(&full, &full_data)?;
    let full_run = train_distill_with_teacher(&full, &full_data, &full_teacher)?;

    let frozen = [&first, &full_run]
        .iter()
        .filter(|r| r.metrics.teacher_checksum_before != r.metrics.teacher_checksum_after)
        .count();
    out.push(invariant("frozen_teacher_checksum", frozen as f64, 0.0, 2));

    let worst = bookkeeping_error(&first).max(bookkeeping_error(&full_run));
    out.push(invariant("loss_bookkeeping", worst, 1e-9, first.metrics.steps.len() + full_run.metrics.steps.len()));

    let partial_bad = gating_violations(&first)
        + usize::from(first.metrics.mode != FrameMode::PartialFrames)
        + usize::from(first.metrics.epochs.iter().any(|e| e.losses.components.contains_key("trd")));
    out.push(invariant("gating_partial_frames", partial_bad as f64, 0.0, first.metrics.epochs.len()));
    let full_bad = gating_violations(&full_run)
        + usize::from(full_run.metrics.mode != FrameMode::FullFrames)
        + usize::from(
            full_run.metrics.epochs.iter().any(|e| e.losses.components.keys().any(|k| k.starts_with("rc_"))),
        );
    out.push(invariant("gating_full_frames", full_bad as f64, 0.0, full_run.metrics.epochs.len()));

    let violating = [
        DistillSettings { student_frames: Some(4), teacher_frames: Some(4), alpha_rc_bev: Some(0.1), ..Default::default() },
        DistillSettings { student_frames: Some(4), teacher_frames: Some(4), alpha_rc_pv: Some(0.1), ..Default::default() },
        DistillSettings { student_frames: Some(2), teacher_frames: Some(4), alpha_trd: Some(0.1), ..Default::default() },
    ];
    let accepted = violating
        .iter()
        .filter(|s| !matches!(DistillConfig::new(s), Err(tempdistill_core::Error::Gating(_))))
        .count();
    out.push(invariant("gating_rejects_violations", accepted as f64, 0.0, violating.len()));

    let a = serde_json::to_string(&first.metrics).map_err(|e| HarnessError::Format(e.to_string()))?;
    let b = serde_json::to_string(&second.metrics).map_err(|e| HarnessError::Format(e.to_string()))?;
    out.push(invariant("run_determinism", f64::from(u8::from(a != b)), 0.0, 2));
    Ok(out)
}
