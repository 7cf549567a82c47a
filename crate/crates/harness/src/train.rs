use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tempdistill_core::autodiff::{Graph, Parameterized, RandomSource, Tensor, Var};
use tempdistill_core::distill::losses::{dc_loss, pv_reconstruction_to_target, rc_bev_loss_to_target, trd_loss};
use tempdistill_core::distill::{
    generate_mask, pv_tsa_aggregate, tsa_aggregate, Component, FrameMode, Generator, GeneratorKind, GeneratorVars,
    LossWeights,
};
use tempdistill_core::scene::{
    generate_scene, observe, task_errors, task_loss_node, Encoding, QueryLayout, Role, SceneObservation, SceneSample,
    ToyDecoder, ToyEncoder,
};

use crate::config::{OptimizerConfig, TrainConfig};
use crate::error::{HarnessError, Result};
use crate::optim::{adamw_step, scheduled_lr, AdamHyper, AdamState};
use crate::probe::alignment_mse;

const HELDOUT_STREAM: u64 = 1 << 32;
const TEACHER_INIT: u64 = 0x7ea;
const STUDENT_ENCODER_INIT: u64 = 0x57e;
const STUDENT_DECODER_INIT: u64 = 0x57d;
const GENERATOR_INIT: u64 = 0x6e0;
const TEACHER_SHUFFLE: u64 = 0x7e5;
const STUDENT_SHUFFLE: u64 = 0x575;
const MASK_STREAM: u64 = 0x3a5;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub scenes: Vec<SceneSample>,
    pub observations: Vec<SceneObservation>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct DataSplit {
    pub layout: QueryLayout,
    pub train: Dataset,
    pub heldout: Dataset,
}

/// Scenes carry as many frames as the teacher reads.
pub fn build_data(cfg: &TrainConfig) -> Result<DataSplit> {
    let d = &cfg.distill;
    let layout = QueryLayout::new(d.queries(), d.height(), d.width())?;
    let frames = d.teacher_frames();
    let make = |count: usize, stream: u64| -> Result<Dataset> {
        let scenes = (0..count as u64)
            .map(|i| generate_scene(RandomSource::derive(cfg.data_seed, stream | i), cfg.objects, frames))
            .collect::<tempdistill_core::Result<Vec<_>>>()?;
        let observations = scenes.par_iter().map(|s| observe(s, &layout, &cfg.sensor)).collect();
        Ok(Dataset { scenes, observations })
    };
    Ok(DataSplit { train: make(cfg.train_scenes, 0)?, heldout: make(cfg.heldout_scenes, HELDOUT_STREAM)?, layout })
}

/// Loss bookkeeping for one optimizer step or one epoch. Components appear
/// only when they were evaluated, i.e. have nonzero weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub task: f64,
    pub components: BTreeMap<String, f64>,
    pub weighted: BTreeMap<String, f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub losses: LossRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(flatten)]
    pub losses: LossRecord,
}

/// Held-out evaluation. `alignment_mse` is absent for the teacher.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldOutMetrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alignment_mse: Option<f64>,
    pub position_error: f64,
    pub velocity_error: f64,
}

/// Everything in a run that is a deterministic function of the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub mode: FrameMode,
    pub weights: LossWeights,
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    pub heldout: HeldOutMetrics,
    pub teacher_heldout: HeldOutMetrics,
    pub teacher_checksum_before: String,
    pub teacher_checksum_after: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: TrainConfig,
    #[serde(flatten)]
    pub metrics: RunMetrics,
    pub wall_clock_seconds: f64,
    /// Trained student, for callers that inspect parameters.
    #[serde(skip)]
    pub student: Student,
}

/// Trained student state.
#[derive(Debug, Clone, PartialEq)]
pub struct Student {
    pub encoder: ToyEncoder,
    pub decoder: ToyDecoder,
    /// BEV, PV-final and PV-spatial generators.
    pub generators: Vec<Generator>,
}

/// Frozen teacher plus its cached outputs on both splits.
#[derive(Debug, Clone)]
pub struct Teacher {
    pub encoder: ToyEncoder,
    pub decoder: ToyDecoder,
    pub train: Vec<Encoding>,
    pub train_decoded: Vec<Tensor>,
    pub heldout: Vec<Encoding>,
    pub metrics: HeldOutMetrics,
    pub epochs: Vec<EpochRecord>,
}

impl Teacher {
    pub fn checksum(&self) -> String {
        checksum(self.encoder.tensors().into_iter().chain(self.decoder.tensors()))
    }
}

/// SHA-256 over the little-endian bytes of every tensor, shapes included.
pub fn checksum<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> String {
    let mut h = Sha256::new();
    for t in tensors {
        for &d in t.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

struct SampleResult {
    grads: Vec<Tensor>,
    task: f64,
    components: Vec<(Component, f64, f64)>,
    total: f64,
}

/// Minibatch AdamW over `n` samples. Per-sample gradients run in parallel
/// and are summed in sample order, so results do not depend on thread
/// count.
fn fit<F>(
    params: &mut [Tensor],
    opt: &OptimizerConfig,
    epochs: usize,
    batch_size: usize,
    n: usize,
    shuffle_seed: u64,
    sample: F,
) -> Result<(Vec<EpochRecord>, Vec<StepRecord>)>
where
    F: Fn(&[Tensor], usize, usize) -> Result<SampleResult> + Sync,
{
    let steps_per_epoch = n.div_ceil(batch_size);
    let total_steps = epochs * steps_per_epoch;
    let mut state = AdamState::new(params.iter());
    let mut epoch_records = Vec::with_capacity(epochs);
    let mut step_records = Vec::with_capacity(total_steps);
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = RandomSource::new(RandomSource::derive(shuffle_seed, epoch as u64));
        for i in (1..n).rev() {
            order.swap(i, rng.below(i + 1));
        }
        let mut epoch_acc = Accumulator::default();
        for batch in order.chunks(batch_size) {
            let snapshot: &[Tensor] = params;
            let results: Vec<SampleResult> =
                batch.par_iter().map(|&i| sample(snapshot, epoch, i)).collect::<Result<_>>()?;
            let mut grads: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            let mut step_acc = Accumulator::default();
            for r in &results {
                for (acc, g) in grads.iter_mut().zip(&r.grads) {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                step_acc.add(r);
                epoch_acc.add(r);
            }
            let inv = 1.0 / results.len() as f64;
            for g in &mut grads {
                for v in g.data_mut() {
                    *v *= inv;
                }
            }
            let step = step_records.len();
            let lr = scheduled_lr(opt, step, total_steps);
            let mut refs: Vec<&mut Tensor> = params.iter_mut().collect();
            adamw_step(&mut refs, &grads, &mut state, &AdamHyper::at_lr(opt, lr))?;
            step_records.push(StepRecord { epoch, step, lr, losses: step_acc.mean() });
        }
        epoch_records.push(EpochRecord { epoch, losses: epoch_acc.mean() });
    }
    Ok((epoch_records, step_records))
}

#[derive(Default)]
struct Accumulator {
    count: usize,
    task: f64,
    total: f64,
    components: BTreeMap<String, (f64, f64)>,
}

impl Accumulator {
    fn add(&mut self, r: &SampleResult) {
        self.count += 1;
        self.task += r.task;
        self.total += r.total;
        for &(c, raw, weighted) in &r.components {
            let e = self.components.entry(c.name().to_string()).or_default();
            e.0 += raw;
            e.1 += weighted;
        }
    }

    fn mean(&self) -> LossRecord {
        let k = self.count as f64;
        LossRecord {
            task: self.task / k,
            components: self.components.iter().map(|(n, v)| (n.clone(), v.0 / k)).collect(),
            weighted: self.components.iter().map(|(n, v)| (n.clone(), v.1 / k)).collect(),
            total: self.total / k,
        }
    }
}

fn bind_all(g: &mut Graph, params: &[Tensor]) -> Vec<Var> {
    params.iter().map(|p| g.param(p.clone())).collect()
}

fn collect_grads(g: &Graph, loss: Var, vars: &[Var]) -> Result<Vec<Tensor>> {
    let grads = g.backward(loss)?;
    Ok(vars.iter().map(|&v| grads.wrt(v).clone()).collect())
}

fn flatten(models: &[&dyn ParamView]) -> Vec<Tensor> {
    models.iter().flat_map(|m| m.view()).collect()
}

trait ParamView {
    fn view(&self) -> Vec<Tensor>;
}

impl<T: Parameterized> ParamView for T {
    fn view(&self) -> Vec<Tensor> {
        self.tensors().into_iter().cloned().collect()
    }
}

fn write_back<T: Parameterized>(model: &mut T, values: &[Tensor]) -> usize {
    let slots = model.tensors_mut();
    let n = slots.len();
    for (slot, v) in slots.into_iter().zip(values) {
        *slot = v.clone();
    }
    n
}

/// Encodes and decodes every scene, returning the encodings and pooled
/// per-object errors (`alignment_mse` unset).
pub fn evaluate(
    encoder: &ToyEncoder,
    decoder: &ToyDecoder,
    frames: usize,
    data: &Dataset,
) -> Result<(Vec<Encoding>, HeldOutMetrics)> {
    let outputs: Vec<(Encoding, tempdistill_core::scene::TaskErrors, usize)> = data
        .observations
        .par_iter()
        .zip(&data.scenes)
        .map(|(obs, scene)| {
            let enc = encoder.encode(obs, frames)?;
            let (_, preds) = decoder.decode_and_regress(&enc.bev)?;
            let errors = task_errors(&preds, scene)?;
            Ok((enc, errors, scene.ground_truth.len()))
        })
        .collect::<tempdistill_core::Result<_>>()?;
    let objects: usize = outputs.iter().map(|o| o.2).sum();
    let position = outputs.iter().map(|o| o.1.position * o.2 as f64).sum::<f64>() / objects as f64;
    let velocity = outputs.iter().map(|o| o.1.velocity * o.2 as f64).sum::<f64>() / objects as f64;
    let encodings = outputs.into_iter().map(|o| o.0).collect();
    Ok((encodings, HeldOutMetrics { alignment_mse: None, position_error: position, velocity_error: velocity }))
}

/// Builds a task-loss-only sample function for an encoder/decoder pair.
fn task_only_sample<'a>(
    encoder: &'a ToyEncoder,
    decoder: &'a ToyDecoder,
    frames: usize,
    data: &'a Dataset,
) -> impl Fn(&[Tensor], usize, usize) -> Result<SampleResult> + Sync + 'a {
    let split = encoder.tensors().len();
    move |params, _epoch, i| {
        let mut g = Graph::new();
        let vars = bind_all(&mut g, params);
        let out = encoder.forward(&mut g, &vars[..split], &data.observations[i], frames)?;
        let dec = decoder.forward(&mut g, &vars[split..], out.bev)?;
        let task = task_loss_node(&mut g, dec.predictions, &data.scenes[i])?;
        let value = g.value(task).item();
        Ok(SampleResult { grads: collect_grads(&g, task, &vars)?, task: value, components: Vec::new(), total: value })
    }
}

/// Trains the teacher on the task loss alone over all teacher frames, then
/// caches its outputs on both splits.
pub fn prepare_teacher(cfg: &TrainConfig, data: &DataSplit) -> Result<Teacher> {
    let d = &cfg.distill;
    let mut rng = RandomSource::new(RandomSource::derive(cfg.seed, TEACHER_INIT));
    let mut encoder = ToyEncoder::random(Role::Teacher, d.teacher_frames(), d.channels(), &mut rng);
    let mut decoder = ToyDecoder::random(d.channels(), data.layout.anchors(), &mut rng);
    let mut params = flatten(&[&encoder, &decoder]);
    let (epochs, _) = {
        let sample = task_only_sample(&encoder, &decoder, d.teacher_frames(), &data.train);
        fit(
            &mut params,
            &cfg.teacher_optimizer,
            cfg.teacher_epochs,
            cfg.batch_size,
            data.train.len(),
            RandomSource::derive(cfg.seed, TEACHER_SHUFFLE),
            sample,
        )?
    };
    let n = write_back(&mut encoder, &params);
    write_back(&mut decoder, &params[n..]);
    let (train, _) = evaluate(&encoder, &decoder, d.teacher_frames(), &data.train)?;
    let train_decoded = train
        .par_iter()
        .map(|e| Ok(decoder.decode_and_regress(&e.bev)?.0.values().clone()))
        .collect::<Result<_>>()?;
    let (heldout, metrics) = evaluate(&encoder, &decoder, d.teacher_frames(), &data.heldout)?;
    Ok(Teacher { encoder, decoder, train, train_decoded, heldout, metrics, epochs })
}

/// Per-scene distillation targets for one student frame count.
struct Targets {
    bev_aggregate: Vec<Tensor>,
    pv_aggregate: Vec<Tensor>,
    pv_spatial: Vec<Tensor>,
}

fn build_targets(teacher: &[Encoding], frames: usize) -> Result<Targets> {
    let bev_aggregate = teacher
        .par_iter()
        .map(|e| Ok(tsa_aggregate(&e.bev, frames)?.into_values()))
        .collect::<Result<_>>()?;
    let pv_aggregate = teacher.par_iter().map(|e| Ok(pv_tsa_aggregate(&e.pv, frames)?)).collect::<Result<_>>()?;
    let pv_spatial =
        teacher.iter().map(|e| Ok(e.pv_spatial.values().leading(frames)?)).collect::<Result<_>>()?;
    Ok(Targets { bev_aggregate, pv_aggregate, pv_spatial })
}

fn fresh_student(cfg: &TrainConfig, layout: &QueryLayout) -> Student {
    let d = &cfg.distill;
    let mut rng = RandomSource::new(RandomSource::derive(cfg.seed, STUDENT_ENCODER_INIT));
    let encoder = ToyEncoder::random(Role::Student, d.student_frames(), d.channels(), &mut rng);
    let mut rng = RandomSource::new(RandomSource::derive(cfg.seed, STUDENT_DECODER_INIT));
    let decoder = ToyDecoder::random(d.channels(), layout.anchors(), &mut rng);
    let mut rng = RandomSource::new(RandomSource::derive(cfg.seed, GENERATOR_INIT));
    let generators = vec![
        Generator::random(GeneratorKind::Bev, d.channels(), &mut rng),
        Generator::random(GeneratorKind::Pv, d.channels(), &mut rng),
        Generator::random(GeneratorKind::Pv, d.channels(), &mut rng),
    ];
    Student { encoder, decoder, generators }
}

fn generator_vars(kind: GeneratorKind, v: &[Var]) -> GeneratorVars {
    GeneratorVars { kind, w1: v[0], b1: v[1], w2: v[2], b2: v[3] }
}

/// Mask seed for one (epoch, sample, stream) triple.
pub fn mask_seed(seed: u64, epoch: usize, sample: usize, stream: u64) -> u64 {
    let s = RandomSource::derive(seed, MASK_STREAM ^ stream);
    RandomSource::derive(RandomSource::derive(s, epoch as u64), sample as u64)
}

/// Full pipeline: data, teacher, student.
pub fn train_distill(cfg: &TrainConfig) -> Result<RunReport> {
    let data = build_data(cfg)?;
    let teacher = prepare_teacher(cfg, &data)?;
    train_distill_with_teacher(cfg, &data, &teacher)
}

/// Trains a student against an already prepared teacher. The teacher is
/// only read; its checksum is recorded before and after.
pub fn train_distill_with_teacher(cfg: &TrainConfig, data: &DataSplit, teacher: &Teacher) -> Result<RunReport> {
    let start = Instant::now();
    let d = &cfg.distill;
    if teacher.encoder.frames() != d.teacher_frames() || teacher.train.len() != data.train.len() {
        return Err(HarnessError::Config("teacher was prepared for a different configuration".into()));
    }
    let checksum_before = teacher.checksum();
    let frames = d.student_frames();
    let weights = d.weights();
    let active = weights.active();
    let targets = build_targets(&teacher.train, frames)?;
    let mut student = fresh_student(cfg, &data.layout);
    let with_generators = active.iter().any(|c| matches!(c, Component::RcBev | Component::RcPv));
    let mut params = flatten(&[&student.encoder, &student.decoder]);
    if with_generators {
        for gen in &student.generators {
            params.extend(gen.view());
        }
    }
    let enc_n = student.encoder.tensors().len();
    let dec_n = student.decoder.tensors().len();
    let (ratio, tau, mask_base) = (d.mask_ratio(), d.temperature(), cfg.seed);
    let (nq, h, w) = (d.queries(), d.height(), d.width());

    let (epochs, steps) = {
        let (encoder, decoder) = (&student.encoder, &student.decoder);
        let targets = &targets;
        let sample = move |params: &[Tensor], epoch: usize, i: usize| -> Result<SampleResult> {
            let mut g = Graph::new();
            let vars = bind_all(&mut g, params);
            let out = encoder.forward(&mut g, &vars[..enc_n], &data.train.observations[i], frames)?;
            let dec = decoder.forward(&mut g, &vars[enc_n..enc_n + dec_n], out.bev)?;
            let task = task_loss_node(&mut g, dec.predictions, &data.train.scenes[i])?;
            let gens = &vars[enc_n + dec_n..];
            let mut total = task;
            let mut components = Vec::new();
            for &c in &active {
                let node = match c {
                    Component::RcBev => {
                        let mask = generate_mask(&[frames, nq], ratio, mask_seed(mask_base, epoch, i, 1))?;
                        let gv = generator_vars(GeneratorKind::Bev, &gens[0..4]);
                        rc_bev_loss_to_target(&mut g, out.bev, &targets.bev_aggregate[i], &gv, &mask)?
                    }
                    Component::RcPv => {
                        let m3 = generate_mask(&[frames, h, w], ratio, mask_seed(mask_base, epoch, i, 2))?;
                        let m2 = generate_mask(&[frames, h, w], ratio, mask_seed(mask_base, epoch, i, 3))?;
                        let g3 = generator_vars(GeneratorKind::Pv, &gens[4..8]);
                        let g2 = generator_vars(GeneratorKind::Pv, &gens[8..12]);
                        let temporal =
                            pv_reconstruction_to_target(&mut g, out.pv_final, &targets.pv_aggregate[i], &g3, &m3)?;
                        let spatial =
                            pv_reconstruction_to_target(&mut g, out.pv_spatial, &targets.pv_spatial[i], &g2, &m2)?;
                        g.add(temporal, spatial)?
                    }
                    Component::Dc => {
                        let t = g.constant(teacher.train_decoded[i].clone());
                        dc_loss(&mut g, dec.decoded, t)?
                    }
                    Component::Trd => {
                        let t = g.constant(teacher.train[i].bev.values().clone());
                        trd_loss(&mut g, out.bev, t, tau)?
                    }
                };
                let alpha = weights.get(c);
                let weighted = g.scale(node, alpha);
                components.push((c, g.value(node).item(), g.value(weighted).item()));
                total = g.add(total, weighted)?;
            }
            Ok(SampleResult {
                grads: collect_grads(&g, total, &vars)?,
                task: g.value(task).item(),
                components,
                total: g.value(total).item(),
            })
        };
        fit(
            &mut params,
            &cfg.optimizer,
            cfg.epochs,
            cfg.batch_size,
            data.train.len(),
            RandomSource::derive(cfg.seed, STUDENT_SHUFFLE),
            sample,
        )?
    };

    let mut offset = write_back(&mut student.encoder, &params);
    offset += write_back(&mut student.decoder, &params[offset..]);
    if with_generators {
        for gen in &mut student.generators {
            offset += write_back(gen, &params[offset..]);
        }
    }

    let (train_enc, _) = evaluate(&student.encoder, &student.decoder, frames, &data.train)?;
    let (heldout_enc, mut heldout) = evaluate(&student.encoder, &student.decoder, frames, &data.heldout)?;
    let heldout_targets = build_targets(&teacher.heldout, frames)?;
    let train_x: Vec<&Tensor> = train_enc.iter().map(|e| e.bev.values()).collect();
    let test_x: Vec<&Tensor> = heldout_enc.iter().map(|e| e.bev.values()).collect();
    heldout.alignment_mse = Some(alignment_mse(
        &train_x,
        &targets.bev_aggregate.iter().collect::<Vec<_>>(),
        &test_x,
        &heldout_targets.bev_aggregate.iter().collect::<Vec<_>>(),
    )?);

    let metrics = RunMetrics {
        mode: d.mode(),
        weights,
        epochs,
        steps,
        heldout,
        teacher_heldout: teacher.metrics,
        teacher_checksum_before: checksum_before,
        teacher_checksum_after: teacher.checksum(),
    };
    Ok(RunReport { config: cfg.clone(), metrics, wall_clock_seconds: start.elapsed().as_secs_f64(), student })
}

/// Task-loss-only training of a fresh student, with no distillation
/// machinery at all.
pub fn train_task_only(cfg: &TrainConfig, data: &DataSplit) -> Result<Student> {
    let mut student = fresh_student(cfg, &data.layout);
    let mut params = flatten(&[&student.encoder, &student.decoder]);
    {
        let sample = task_only_sample(&student.encoder, &student.decoder, cfg.distill.student_frames(), &data.train);
        fit(
            &mut params,
            &cfg.optimizer,
            cfg.epochs,
            cfg.batch_size,
            data.train.len(),
            RandomSource::derive(cfg.seed, STUDENT_SHUFFLE),
            sample,
        )?;
    }
    let n = write_back(&mut student.encoder, &params);
    write_back(&mut student.decoder, &params[n..]);
    Ok(student)
}
