//! Run directories and report files. Nothing here overwrites an existing
//! file: every run gets a fresh timestamped directory, and derived reports
//! may only be rewritten with identical contents.

use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tempdistill_core::distill::{Component, FrameMode, LossWeights};

use crate::error::{HarnessError, Result};
use crate::train::{HeldOutMetrics, LossRecord, RunMetrics, RunReport};

/// Environment variable naming the default output root.
pub const OUTPUT_ENV: &str = "TEMPDISTILL_OUT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";

pub const REPORT_FILE: &str = "report.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const CURVES_FILE: &str = "curves.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const VERIFICATION_FILE: &str = "verification.json";

/// `explicit`, else the config's directory, else `$TEMPDISTILL_OUT`, else
/// `./runs`.
pub fn output_root(explicit: Option<&Path>, configured: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit.or(configured) {
        return p.to_path_buf();
    }
    match std::env::var_os(OUTPUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_OUTPUT_ROOT),
    }
}

/// Creates `root/<label>-<UTC timestamp>`, adding a numeric suffix when that
/// name is taken.
pub fn create_run_dir(root: &Path, label: &str) -> Result<PathBuf> {
    fs::create_dir_all(root).map_err(|e| HarnessError::io(format!("creating {}", root.display()), e))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
    let base = format!("{label}-{stamp}");
    for n in 0.. {
        let name = if n == 0 { base.clone() } else { format!("{base}-{n}") };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(HarnessError::io(format!("creating {}", dir.display()), e)),
        }
    }
    unreachable!("the suffix search only ends by returning")
}

/// Writes a new file; an existing file is an error unless its contents are
/// already exactly `bytes`.
pub fn write_new(path: &Path, bytes: &[u8]) -> Result<()> {
    match OpenOptions::new().write(true).create_new(true).open(path) {
        Ok(mut f) => f.write_all(bytes).map_err(|e| HarnessError::io(format!("writing {}", path.display()), e)),
        Err(e) if e.kind() == ErrorKind::AlreadyExists => {
            let existing = fs::read(path).map_err(|e| HarnessError::io(format!("reading {}", path.display()), e))?;
            if existing == bytes {
                Ok(())
            } else {
                Err(HarnessError::Format(format!("{} exists with different contents; refusing to overwrite", path.display())))
            }
        }
        Err(e) => Err(HarnessError::io(format!("creating {}", path.display()), e)),
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Format(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_new(path, to_json(value)?.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Format(format!("{}: {e}", path.display())))
}

/// The deterministic part of a run: config echo plus metrics, no timing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub config: serde_json::Value,
    pub metrics: RunMetrics,
}

impl MetricsDocument {
    pub fn from_report(report: &RunReport) -> Result<Self> {
        let config = serde_json::to_value(&report.config).map_err(|e| HarnessError::Format(e.to_string()))?;
        Ok(MetricsDocument { config, metrics: report.metrics.clone() })
    }
}

/// Writes `report.json` and `metrics.json` into `dir`.
pub fn write_run(dir: &Path, report: &RunReport) -> Result<()> {
    write_json(&dir.join(REPORT_FILE), report)?;
    write_json(&dir.join(METRICS_FILE), &MetricsDocument::from_report(report)?)
}

/// Condensed view of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: FrameMode,
    pub weights: LossWeights,
    pub epochs: usize,
    pub steps: usize,
    pub final_epoch: Option<LossRecord>,
    pub heldout: HeldOutMetrics,
    pub teacher_heldout: HeldOutMetrics,
    pub teacher_frozen: bool,
}

pub fn summarize(m: &RunMetrics) -> RunSummary {
    RunSummary {
        mode: m.mode,
        weights: m.weights,
        epochs: m.epochs.len(),
        steps: m.steps.len(),
        final_epoch: m.epochs.last().map(|e| e.losses.clone()),
        heldout: m.heldout,
        teacher_heldout: m.teacher_heldout,
        teacher_frozen: m.teacher_checksum_before == m.teacher_checksum_after,
    }
}

/// Per-epoch curves: `epoch, task, total`, then raw and weighted values for
/// every component the run evaluated. Absent components get no column.
pub fn curves_csv(m: &RunMetrics) -> Result<String> {
    let present: Vec<Component> = Component::ALL
        .into_iter()
        .filter(|c| m.epochs.iter().any(|e| e.losses.components.contains_key(c.name())))
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["epoch".to_string(), "task".into(), "total".into()];
    for c in &present {
        header.push(c.name().to_string());
        header.push(format!("weighted_{}", c.name()));
    }
    w.write_record(&header).map_err(csv_err)?;
    for e in &m.epochs {
        let mut row = vec![e.epoch.to_string(), e.losses.task.to_string(), e.losses.total.to_string()];
        for c in &present {
            for map in [&e.losses.components, &e.losses.weighted] {
                row.push(map.get(c.name()).map(f64::to_string).unwrap_or_default());
            }
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| HarnessError::Format(e.to_string()))
}

pub(crate) fn csv_err(e: csv::Error) -> HarnessError {
    HarnessError::Format(format!("csv: {e}"))
}

/// Reads `metrics.json` from a run directory and writes `curves.csv` and
/// `summary.json` next to it.
pub fn report_run(dir: &Path) -> Result<RunSummary> {
    let doc: MetricsDocument = read_json(&dir.join(METRICS_FILE))?;
    write_new(&dir.join(CURVES_FILE), curves_csv(&doc.metrics)?.as_bytes())?;
    let summary = summarize(&doc.metrics);
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}
