use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tempdistill_core::autodiff::GradientFault;
use tempdistill_harness::ablation::{default_grid, parse_grid, run_ablation, AblationKind};
use tempdistill_harness::config::TrainConfig;
use tempdistill_harness::output::{self, create_run_dir, output_root, write_json, write_new, write_run, VERIFICATION_FILE};
use tempdistill_harness::train::train_distill;
use tempdistill_harness::verify::{parse_fault_kind, run_verification_suite, VerifyOptions};
use tempdistill_harness::{HarnessError, Result};

/// Multiplier applied to the injected op's backward pass.
const INJECTED_FAULT_SCALE: f64 = 1.5;

#[derive(Parser)]
#[command(name = "tempdistill", version, about = "Temporal feature distillation on toy multi-frame scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Oracle equivalence, gradient checks and invariants.
    Verify {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Corrupt the backward pass of one op kind (e.g. `conv`).
        #[arg(long, value_name = "KIND")]
        inject_fault: Option<String>,
    },
    /// Train a teacher and a distilled student.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep one setting and tabulate held-out metrics.
    Ablate {
        #[arg(long, value_parser = parse_kind)]
        kind: AblationKind,
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated grid; defaults to the built-in grid for the kind.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Derive curves.csv and summary.json from a finished run.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn parse_kind(s: &str) -> std::result::Result<AblationKind, String> {
    s.parse().map_err(|e: HarnessError| e.to_string())
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<TrainConfig> {
    let cfg = TrainConfig::load(path)?;
    match seed {
        Some(s) => cfg.with_seed(s),
        None => Ok(cfg),
    }
}

/// Returns whether the command succeeded on its own terms.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Verify { out, seed, inject_fault } => {
            let fault = match inject_fault.as_deref() {
                None => None,
                Some(name) => {
                    let kind = parse_fault_kind(name)
                        .ok_or_else(|| HarnessError::Config(format!("unknown op kind `{name}`")))?;
                    Some(GradientFault { kind, scale: INJECTED_FAULT_SCALE })
                }
            };
            let report = run_verification_suite(&VerifyOptions { seed, fault })?;
            let dir = create_run_dir(&output_root(out.as_deref(), None), "verify")?;
            write_json(&dir.join(VERIFICATION_FILE), &report)?;
            for c in &report.checks {
                let status = if c.passed { "ok  " } else { "FAIL" };
                println!("{status} {:<20} {:<40} abs {:.3e} rel {:.3e} tol {:.1e}",
                    format!("{:?}", c.category), c.name, c.max_abs_error, c.max_rel_error, c.tolerance);
            }
            let failures = report.failures();
            if failures.is_empty() {
                println!("all {} checks passed; report in {}", report.checks.len(), dir.display());
            } else {
                let names: Vec<&str> = failures.iter().map(|c| c.name.as_str()).collect();
                println!("{} of {} checks failed: {}", names.len(), report.checks.len(), names.join(", "));
                println!("report in {}", dir.display());
            }
            Ok(report.passed)
        }
        Command::Train { config, seed, out } => {
            let cfg = load_config(&config, seed)?;
            let root = output_root(out.as_deref(), cfg.output_dir.as_deref());
            let report = train_distill(&cfg)?;
            let dir = create_run_dir(&root, "train")?;
            write_run(&dir, &report)?;
            let summary = output::report_run(&dir)?;
            let h = summary.heldout;
            println!(
                "{:?} run: alignment {:.6} position {:.6} velocity {:.6} ({:.1}s); written to {}",
                summary.mode,
                h.alignment_mse.unwrap_or(f64::NAN),
                h.position_error,
                h.velocity_error,
                report.wall_clock_seconds,
                dir.display()
            );
            Ok(summary.teacher_frozen)
        }
        Command::Ablate { kind, config, grid, out } => {
            let cfg = load_config(&config, None)?;
            let grid = match grid {
                Some(text) => parse_grid(kind, &text)?,
                None => default_grid(kind),
            };
            let root = output_root(out.as_deref(), cfg.output_dir.as_deref());
            let table = run_ablation(&cfg, kind, &grid)?;
            let dir = create_run_dir(&root, &format!("ablate-{kind}"))?;
            let csv = table.to_csv()?;
            write_new(&dir.join("ablation.csv"), csv.as_bytes())?;
            write_json(&dir.join("ablation.json"), &table)?;
            print!("{csv}");
            println!("written to {}", dir.display());
            Ok(true)
        }
        Command::Report { run } => {
            let s = output::report_run(&run)?;
            println!("{}", output::to_json(&s)?.trim_end());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ HarnessError::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
