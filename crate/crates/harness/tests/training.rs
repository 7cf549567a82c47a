use tempdistill_core::distill::FrameMode;
use tempdistill_harness::config::TrainConfig;
use tempdistill_harness::train::{build_data, prepare_teacher, train_distill, train_distill_with_teacher, train_task_only};
use tempdistill_harness::verify::{bookkeeping_error, gating_violations, tiny_config};
use tempdistill_harness::HarnessError;

fn is_config_error<T: std::fmt::Debug>(r: tempdistill_harness::Result<T>) -> bool {
    matches!(r, Err(HarnessError::Config(_)))
}

#[test]
fn invalid_configs_are_rejected_before_training() {
    assert!(is_config_error(TrainConfig::parse("epochs = 0")));
    assert!(is_config_error(TrainConfig::parse("teacher_epochs = 0")));
    assert!(is_config_error(TrainConfig::parse("batch_size = 0")));
    assert!(is_config_error(TrainConfig::parse("not_a_key = 1")));
    assert!(is_config_error(TrainConfig::parse("[distill]\nnot_a_key = 1")));
    assert!(is_config_error(TrainConfig::parse("[optimizer]\nlr = -1.0")));
    assert!(is_config_error(TrainConfig::parse("[distill]\nmask_ratio = 1.5")));
    // Partial-frames students may not carry a TRD weight.
    assert!(is_config_error(TrainConfig::parse("[distill]\nstudent_frames = 4\nteacher_frames = 8\nalpha_trd = 1.0")));
    // Full-frames students may not carry reconstruction weights.
    assert!(is_config_error(TrainConfig::parse("[distill]\nstudent_frames = 8\nteacher_frames = 8\nalpha_rc_bev = 1.0")));
}

#[test]
fn shipped_toy_config_parses() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/toy.toml");
    let cfg = TrainConfig::load(std::path::Path::new(path)).unwrap();
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.distill.student_frames(), 4);
    assert_eq!(cfg.distill.teacher_frames(), 8);
}

#[test]
fn one_epoch_on_one_scene_gives_finite_losses() {
    let cfg = tiny_config(2, 4)
        .unwrap()
        .modified(|s| {
            s.epochs = Some(1);
            s.teacher_epochs = Some(1);
            s.train_scenes = Some(1);
            s.heldout_scenes = Some(1);
        })
        .unwrap();
    let r = train_distill(&cfg).unwrap();
    assert_eq!(r.metrics.epochs.len(), 1);
    let l = &r.metrics.epochs[0].losses;
    assert!(l.total.is_finite() && l.task.is_finite());
    assert!(l.components.values().all(|v| v.is_finite()));
    assert!(r.metrics.heldout.position_error.is_finite());
}

#[test]
fn zero_weights_reduce_to_task_only_training() {
    let cfg = tiny_config(2, 4)
        .unwrap()
        .modified(|s| {
            s.distill.alpha_rc_bev = Some(0.0);
            s.distill.alpha_rc_pv = Some(0.0);
            s.distill.alpha_dc = Some(0.0);
        })
        .unwrap();
    let data = build_data(&cfg).unwrap();
    let teacher = prepare_teacher(&cfg, &data).unwrap();
    let distilled = train_distill_with_teacher(&cfg, &data, &teacher).unwrap();
    let plain = train_task_only(&cfg, &data).unwrap();
    assert_eq!(distilled.student.encoder, plain.encoder);
    assert_eq!(distilled.student.decoder, plain.decoder);
}

#[test]
fn runs_are_deterministic_and_seed_sensitive() {
    let cfg = tiny_config(2, 4).unwrap();
    let a = train_distill(&cfg).unwrap();
    let b = train_distill(&cfg).unwrap();
    assert_eq!(serde_json::to_string(&a.metrics).unwrap(), serde_json::to_string(&b.metrics).unwrap());
    assert_eq!(a.student, b.student);
    let c = train_distill(&cfg.with_seed(8).unwrap()).unwrap();
    assert_ne!(a.student, c.student);
}

#[test]
fn bookkeeping_gating_and_frozen_teacher_hold_in_both_modes() {
    for (student, teacher, mode) in [(2, 4, FrameMode::PartialFrames), (4, 4, FrameMode::FullFrames)] {
        let r = train_distill(&tiny_config(student, teacher).unwrap()).unwrap();
        assert_eq!(r.metrics.mode, mode);
        assert!(bookkeeping_error(&r) <= 1e-9, "{mode:?}: {}", bookkeeping_error(&r));
        assert_eq!(gating_violations(&r), 0, "{mode:?}");
        assert_eq!(r.metrics.teacher_checksum_before, r.metrics.teacher_checksum_after);
    }
}

#[test]
fn report_json_round_trips_metrics() {
    let r = train_distill(&tiny_config(2, 4).unwrap()).unwrap();
    let text = serde_json::to_string(&r).unwrap();
    let back: tempdistill_harness::train::RunMetrics = serde_json::from_str(&text).unwrap();
    assert_eq!(back, r.metrics);
}

#[test]
fn fully_spelled_defaults_equal_empty_document() {
    let full = r#"
seed = 7
data_seed = 1000
epochs = 150
teacher_epochs = 300
batch_size = 8
train_scenes = 64
heldout_scenes = 16
objects = 6

[distill]
student_frames = 4
teacher_frames = 8
mask_ratio = 0.5
temperature = 0.5
queries = 16
channels = 8
height = 8
width = 8

[optimizer]
lr = 2e-4
beta1 = 0.9
beta2 = 0.999
eps = 1e-8
weight_decay = 0.01
cosine = true

[sensor]
sigma = 10.0
noise = 0.3
"#;
    let a = TrainConfig::parse(full).unwrap();
    let b = TrainConfig::parse("").unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}
