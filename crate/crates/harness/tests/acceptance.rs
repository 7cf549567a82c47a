//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Criteria 5 to 7 train at the shipped toy scale and take minutes.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use tempdistill_core::distill::{Component, FrameMode};
use tempdistill_harness::ablation::{default_grid, run_ablation, AblationKind, GridPoint};
use tempdistill_harness::config::TrainConfig;
use tempdistill_harness::output::{to_json, MetricsDocument};
use tempdistill_harness::train::{build_data, prepare_teacher, train_distill, train_distill_with_teacher, RunReport};
use tempdistill_harness::verify::{
    bookkeeping_error, gating_violations, run_verification_suite, tiny_config, CheckCategory, CheckResult,
    VerificationReport, VerifyOptions, EQUIVALENCE_INSTANCES,
};
use tempdistill_harness::Result;

const EQUIVALENCE_BUDGET: Duration = Duration::from_secs(60);
const EFFICACY_BUDGET: Duration = Duration::from_secs(600);
const MASK_GRID: [f64; 5] = [0.4, 0.5, 0.6, 0.75, 0.9];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn checks<'a>(r: &'a VerificationReport, names: &'a [&str]) -> impl Iterator<Item = &'a CheckResult> {
    r.checks.iter().filter(move |c| names.contains(&c.name.as_str()))
}

fn all_pass(r: &VerificationReport, names: &[&str]) -> Outcome {
    let found: Vec<&CheckResult> = checks(r, names).collect();
    let failed: Vec<&str> = found.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if found.len() != names.len() {
        return outcome(false, format!("expected {} checks, found {}", names.len(), found.len()));
    }
    let worst = found.iter().map(|c| c.max_abs_error).fold(0.0, f64::max);
    if failed.is_empty() {
        outcome(true, format!("{} checks, worst error {worst:.3e}", found.len()))
    } else {
        outcome(false, format!("failed: {}", failed.join(", ")))
    }
}

fn toy_config() -> Result<TrainConfig> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml");
    TrainConfig::load(&path)
}

fn without_distillation(cfg: &TrainConfig) -> Result<TrainConfig> {
    cfg.modified(|s| {
        for slot in [&mut s.distill.alpha_rc_bev, &mut s.distill.alpha_rc_pv, &mut s.distill.alpha_dc, &mut s.distill.alpha_trd] {
            *slot = Some(0.0);
        }
    })
}

/// Distilled and baseline arms sharing one teacher. The elapsed time covers
/// data, teacher and both students.
fn two_arms(distilled: &TrainConfig) -> Result<(RunReport, RunReport, Duration)> {
    let start = Instant::now();
    let baseline = without_distillation(distilled)?;
    let data = build_data(distilled)?;
    let teacher = prepare_teacher(distilled, &data)?;
    let d = train_distill_with_teacher(distilled, &data, &teacher)?;
    let b = train_distill_with_teacher(&baseline, &data, &teacher)?;
    Ok((d, b, start.elapsed()))
}

fn criterion_1(r: &VerificationReport, elapsed: Duration) -> Outcome {
    let eq: Vec<&CheckResult> = r.checks.iter().filter(|c| c.category == CheckCategory::OracleEquivalence).collect();
    let failed: Vec<&str> = eq.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    let few = eq.iter().filter(|c| c.instances < EQUIVALENCE_INSTANCES).count();
    let worst = eq.iter().map(|c| c.max_abs_error).fold(0.0, f64::max);
    let passed = !eq.is_empty() && failed.is_empty() && few == 0 && elapsed < EQUIVALENCE_BUDGET;
    outcome(
        passed,
        format!(
            "{} ops x >= {EQUIVALENCE_INSTANCES} instances, worst abs {worst:.3e} (tol 1e-10), suite {:.2}s{}",
            eq.len(),
            elapsed.as_secs_f64(),
            if failed.is_empty() { String::new() } else { format!(", failed: {}", failed.join(", ")) }
        ),
    )
}

fn criterion_2(r: &VerificationReport) -> Outcome {
    let g: Vec<&CheckResult> = r.checks.iter().filter(|c| c.category == CheckCategory::Gradient).collect();
    let failed: Vec<&str> = g.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    let required = ["toy_encoder", "toy_decoder", "generator_1d", "generator_2d", "rc_bev_loss", "trd_loss"];
    let missing: Vec<&str> = required.iter().copied().filter(|n| !g.iter().any(|c| c.name == *n)).collect();
    let worst = g.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    outcome(
        failed.is_empty() && missing.is_empty() && !g.is_empty(),
        format!(
            "{}/{} reports pass, worst rel {worst:.3e} (tol 1e-5){}{}",
            g.len() - failed.len(),
            g.len(),
            if failed.is_empty() { String::new() } else { format!(", failed: {}", failed.join(", ")) },
            if missing.is_empty() { String::new() } else { format!(", missing: {}", missing.join(", ")) }
        ),
    )
}

fn criterion_4(r: &VerificationReport) -> Result<Outcome> {
    let suite = all_pass(r, &["gating_partial_frames", "gating_full_frames", "gating_rejects_violations"]);
    let partial = train_distill(&tiny_config(2, 4)?)?;
    let full = train_distill(&tiny_config(4, 4)?)?;
    let modes_ok = partial.metrics.mode == FrameMode::PartialFrames && full.metrics.mode == FrameMode::FullFrames;
    let violations = gating_violations(&partial) + gating_violations(&full);
    let trd_in_partial = partial.metrics.steps.iter().any(|s| s.losses.components.contains_key(Component::Trd.name()));
    let rc_in_full = full.metrics.steps.iter().any(|s| {
        [Component::RcBev, Component::RcPv].iter().any(|c| s.losses.components.contains_key(c.name()))
    });
    let rejected = TrainConfig::parse("[distill]\nstudent_frames = 4\nteacher_frames = 8\nalpha_trd = 1.0").is_err()
        && TrainConfig::parse("[distill]\nstudent_frames = 8\nteacher_frames = 8\nalpha_rc_pv = 1.0").is_err();
    Ok(outcome(
        suite.passed && modes_ok && violations == 0 && !trd_in_partial && !rc_in_full && rejected,
        format!("{}; violating configs rejected: {rejected}; out-of-mode records: {violations}", suite.detail),
    ))
}

fn criterion_5(cfg: &TrainConfig) -> Result<Outcome> {
    let (d, b, elapsed) = two_arms(cfg)?;
    let (da, ba) = (d.metrics.heldout.alignment_mse.unwrap_or(f64::NAN), b.metrics.heldout.alignment_mse.unwrap_or(f64::NAN));
    let (dv, bv) = (d.metrics.heldout.velocity_error, b.metrics.heldout.velocity_error);
    Ok(outcome(
        da < ba && dv < bv && elapsed < EFFICACY_BUDGET,
        format!(
            "alignment {da:.6} vs baseline {ba:.6}; velocity {dv:.6} vs baseline {bv:.6}; both arms {:.1}s (budget 600s)",
            elapsed.as_secs_f64()
        ),
    ))
}

fn criterion_6(toy: &TrainConfig) -> Result<Outcome> {
    let teacher_frames = toy.distill.teacher_frames();
    let cfg = toy.modified(|s| {
        s.distill.student_frames = Some(teacher_frames);
        s.distill.alpha_rc_bev = None;
        s.distill.alpha_rc_pv = None;
    })?;
    let (d, b, elapsed) = two_arms(&cfg)?;
    let (dv, bv) = (d.metrics.heldout.velocity_error, b.metrics.heldout.velocity_error);
    Ok(outcome(
        d.metrics.mode == FrameMode::FullFrames && dv <= bv,
        format!(
            "T_stu = T_tea = {teacher_frames}, weights trd {} dc {}: velocity {dv:.6} vs baseline {bv:.6} ({:.1}s)",
            d.metrics.weights.trd,
            d.metrics.weights.dc,
            elapsed.as_secs_f64()
        ),
    ))
}

fn criterion_7(toy: &TrainConfig) -> Result<Outcome> {
    let grid = default_grid(AblationKind::MaskRatio);
    let expected: Vec<GridPoint> = MASK_GRID.into_iter().map(GridPoint::MaskRatio).collect();
    let start = Instant::now();
    let a = run_ablation(toy, AblationKind::MaskRatio, &grid)?;
    let b = run_ablation(toy, AblationKind::MaskRatio, &grid)?;
    let (csv_a, csv_b) = (a.to_csv()?, b.to_csv()?);
    let lines: Vec<&str> = csv_a.lines().collect();
    let width = lines.first().map_or(0, |h| h.split(',').count());
    let well_formed = lines.len() == MASK_GRID.len() + 1
        && lines.iter().all(|l| l.split(',').count() == width)
        && a.rows.iter().zip(MASK_GRID).all(|(r, m)| r.mask_ratio == m)
        && a.rows.iter().all(|r| r.heldout.velocity_error.is_finite() && r.heldout.alignment_mse.is_some_and(f64::is_finite));
    let velocities: Vec<String> = a.rows.iter().map(|r| format!("{}:{:.4}", r.point, r.heldout.velocity_error)).collect();
    Ok(outcome(
        grid == expected && well_formed && csv_a == csv_b,
        format!(
            "grid {:?}, {} rows x {width} columns, identical on rerun: {} ({:.1}s); velocity {}",
            MASK_GRID,
            a.rows.len(),
            csv_a == csv_b,
            start.elapsed().as_secs_f64(),
            velocities.join(" ")
        ),
    ))
}

fn criterion_8(r: &VerificationReport) -> Result<Outcome> {
    let suite = all_pass(r, &["mask_replay", "run_determinism"]);
    let cfg = tiny_config(2, 4)?;
    let docs = [train_distill(&cfg)?, train_distill(&cfg)?]
        .iter()
        .map(|run| to_json(&MetricsDocument::from_report(run)?))
        .collect::<Result<Vec<_>>>()?;
    let identical = docs[0] == docs[1];
    Ok(outcome(suite.passed && identical, format!("{}; metrics files byte-identical: {identical}", suite.detail)))
}

fn criterion_9(r: &VerificationReport) -> Result<Outcome> {
    let suite = all_pass(
        r,
        &[
            "softmax_rows_sum_to_one",
            "attention_rows_sum_to_one",
            "tsa_permutation_equivariance",
            "frozen_teacher_checksum",
            "losses_nonnegative",
            "loss_bookkeeping",
        ],
    );
    let run = train_distill(&tiny_config(2, 4)?)?;
    let books = bookkeeping_error(&run);
    let frozen = run.metrics.teacher_checksum_before == run.metrics.teacher_checksum_after;
    Ok(outcome(
        suite.passed && books <= 1e-9 && frozen,
        format!("{}; training bookkeeping gap {books:.1e}; teacher frozen: {frozen}", suite.detail),
    ))
}

fn report(id: u32, title: &str, result: Result<Outcome>) -> bool {
    let o = result.unwrap_or_else(|e| outcome(false, format!("error: {e}")));
    println!("{} [{id}] {title}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    o.passed
}

fn main() -> ExitCode {
    let start = Instant::now();
    let suite = run_verification_suite(&VerifyOptions::default());
    let suite_time = start.elapsed();
    let suite = match suite {
        Ok(s) => s,
        Err(e) => {
            println!("FAIL verification suite could not run: {e}");
            return ExitCode::FAILURE;
        }
    };
    let toy = toy_config();
    let mut ok = true;
    ok &= report(1, "oracle equivalence", Ok(criterion_1(&suite, suite_time)));
    ok &= report(2, "gradient correctness", Ok(criterion_2(&suite)));
    ok &= report(
        3,
        "trivial zeros",
        Ok(all_pass(
            &suite,
            &[
                "rc_bev_zero_on_equal",
                "rc_pv_zero_on_equal",
                "spatial_reconstruction_zero_on_equal",
                "dc_zero_on_equal",
                "trd_near_zero_on_identical",
            ],
        )),
    );
    ok &= report(4, "mode gating", criterion_4(&suite));
    ok &= report(5, "distillation efficacy", toy.as_ref().map_err(clone_err).and_then(criterion_5));
    ok &= report(6, "full-frames relational distillation", toy.as_ref().map_err(clone_err).and_then(criterion_6));
    ok &= report(7, "mask-ratio ablation", toy.as_ref().map_err(clone_err).and_then(criterion_7));
    ok &= report(8, "determinism", criterion_8(&suite));
    ok &= report(9, "invariants", criterion_9(&suite));
    println!("acceptance {} in {:.1}s", if ok { "passed" } else { "FAILED" }, start.elapsed().as_secs_f64());
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn clone_err(e: &tempdistill_harness::HarnessError) -> tempdistill_harness::HarnessError {
    tempdistill_harness::HarnessError::Format(e.to_string())
}
