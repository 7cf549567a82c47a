//! One distillation run per grid point, sharing teachers where the teacher
//! settings agree, collected into a comparison table.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use tempdistill_core::distill::{Component, FrameMode, LossWeights, DEFAULT_WEIGHTS};

use crate::config::TrainConfig;
use crate::error::{HarnessError, Result};
use crate::output::csv_err;
use crate::train::{build_data, prepare_teacher, train_distill_with_teacher, DataSplit, HeldOutMetrics, Teacher};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationKind {
    MaskRatio,
    LossWeights,
    FrameCount,
    LossComponents,
}

impl AblationKind {
    pub const ALL: [AblationKind; 4] =
        [AblationKind::MaskRatio, AblationKind::LossWeights, AblationKind::FrameCount, AblationKind::LossComponents];

    pub fn name(self) -> &'static str {
        match self {
            AblationKind::MaskRatio => "mask-ratio",
            AblationKind::LossWeights => "loss-weights",
            AblationKind::FrameCount => "frame-count",
            AblationKind::LossComponents => "loss-components",
        }
    }
}

impl fmt::Display for AblationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        AblationKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown ablation kind `{s}`")))
    }
}

/// Reconstruction components a loss-components point may switch on.
pub const TOGGLED_COMPONENTS: [Component; 3] = [Component::RcBev, Component::RcPv, Component::Dc];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridPoint {
    MaskRatio(f64),
    Weight(Component, f64),
    Frames(usize),
    /// Which of [`TOGGLED_COMPONENTS`] keep their configured weight; the
    /// others are set to zero.
    Components(Vec<Component>),
}

impl GridPoint {
    pub fn label(&self) -> String {
        match self {
            GridPoint::MaskRatio(r) => format!("{r}"),
            GridPoint::Weight(c, v) => format!("{c}={v:e}"),
            GridPoint::Frames(n) => n.to_string(),
            GridPoint::Components(cs) if cs.is_empty() => "none".into(),
            GridPoint::Components(cs) => cs.iter().map(|c| c.name()).collect::<Vec<_>>().join("+"),
        }
    }
}

pub fn default_grid(kind: AblationKind) -> Vec<GridPoint> {
    match kind {
        AblationKind::MaskRatio => [0.4, 0.5, 0.6, 0.75, 0.9].into_iter().map(GridPoint::MaskRatio).collect(),
        AblationKind::LossWeights => {
            [1e-5, 2e-5, 5e-5, 1e-4, 2e-4].into_iter().map(|v| GridPoint::Weight(Component::RcBev, v)).collect()
        }
        AblationKind::FrameCount => [2, 4, 8].into_iter().map(GridPoint::Frames).collect(),
        AblationKind::LossComponents => (1u8..8)
            .map(|bits| {
                GridPoint::Components(
                    TOGGLED_COMPONENTS.iter().enumerate().filter(|(i, _)| bits & (1 << i) != 0).map(|(_, &c)| c).collect(),
                )
            })
            .collect(),
    }
}

fn component_named(s: &str) -> Result<Component> {
    Component::ALL
        .into_iter()
        .find(|c| c.name() == s)
        .ok_or_else(|| HarnessError::Config(format!("unknown loss component `{s}`")))
}

fn number<T: FromStr>(s: &str) -> Result<T> {
    s.parse().map_err(|_| HarnessError::Config(format!("cannot parse grid value `{s}`")))
}

/// Comma-separated grid. Loss weights are bare numbers (for `rc_bev`) or
/// `component=value`; component sets are `+`-joined names or `none`.
pub fn parse_grid(kind: AblationKind, text: &str) -> Result<Vec<GridPoint>> {
    let grid = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            Ok(match kind {
                AblationKind::MaskRatio => GridPoint::MaskRatio(number(item)?),
                AblationKind::FrameCount => GridPoint::Frames(number(item)?),
                AblationKind::LossWeights => match item.split_once('=') {
                    Some((c, v)) => GridPoint::Weight(component_named(c.trim())?, number(v.trim())?),
                    None => GridPoint::Weight(Component::RcBev, number(item)?),
                },
                AblationKind::LossComponents if item == "none" => GridPoint::Components(Vec::new()),
                AblationKind::LossComponents => {
                    let cs = item.split('+').map(|c| component_named(c.trim())).collect::<Result<Vec<_>>>()?;
                    if let Some(c) = cs.iter().find(|c| !TOGGLED_COMPONENTS.contains(c)) {
                        return Err(HarnessError::Config(format!("{c} cannot be toggled in a components ablation")));
                    }
                    GridPoint::Components(cs)
                }
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if grid.is_empty() {
        return Err(HarnessError::Config("ablation grid is empty".into()));
    }
    Ok(grid)
}

/// The config for one grid point. A frame count equal to the teacher's
/// switches to full-frames mode, so weights the new mode forbids are reset
/// to their gated defaults instead of carried over.
pub fn point_config(base: &TrainConfig, point: &GridPoint) -> Result<TrainConfig> {
    let weights = base.distill.weights();
    base.modified(|s| match point {
        GridPoint::MaskRatio(r) => s.distill.mask_ratio = Some(*r),
        GridPoint::Weight(c, v) => match c {
            Component::RcBev => s.distill.alpha_rc_bev = Some(*v),
            Component::RcPv => s.distill.alpha_rc_pv = Some(*v),
            Component::Dc => s.distill.alpha_dc = Some(*v),
            Component::Trd => s.distill.alpha_trd = Some(*v),
        },
        GridPoint::Frames(n) => {
            s.distill.student_frames = Some(*n);
            let mode = FrameMode::from_frames(*n, base.distill.teacher_frames());
            for c in Component::ALL {
                if !mode.permits(c) {
                    *alpha_slot(&mut s.distill, c) = None;
                }
            }
        }
        GridPoint::Components(on) => {
            for c in TOGGLED_COMPONENTS {
                let w = weights.get(c);
                let kept = if w != 0.0 { w } else { DEFAULT_WEIGHTS.get(c) };
                *alpha_slot(&mut s.distill, c) = Some(if on.contains(&c) { kept } else { 0.0 });
            }
        }
    })
}

fn alpha_slot(d: &mut tempdistill_core::distill::DistillSettings, c: Component) -> &mut Option<f64> {
    match c {
        Component::RcBev => &mut d.alpha_rc_bev,
        Component::RcPv => &mut d.alpha_rc_pv,
        Component::Dc => &mut d.alpha_dc,
        Component::Trd => &mut d.alpha_trd,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub point: String,
    pub mode: FrameMode,
    pub student_frames: usize,
    pub mask_ratio: f64,
    pub weights: LossWeights,
    pub heldout: HeldOutMetrics,
    pub final_total_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub kind: AblationKind,
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "kind",
            "point",
            "mode",
            "student_frames",
            "mask_ratio",
            "alpha_rc_bev",
            "alpha_rc_pv",
            "alpha_dc",
            "alpha_trd",
            "alignment_mse",
            "position_error",
            "velocity_error",
            "final_total_loss",
        ])
        .map_err(csv_err)?;
        for r in &self.rows {
            let mode = match r.mode {
                FrameMode::PartialFrames => "partial-frames",
                FrameMode::FullFrames => "full-frames",
            };
            w.write_record([
                self.kind.name().to_string(),
                r.point.clone(),
                mode.to_string(),
                r.student_frames.to_string(),
                r.mask_ratio.to_string(),
                r.weights.rc_bev.to_string(),
                r.weights.rc_pv.to_string(),
                r.weights.dc.to_string(),
                r.weights.trd.to_string(),
                r.heldout.alignment_mse.map(|v| v.to_string()).unwrap_or_default(),
                r.heldout.position_error.to_string(),
                r.heldout.velocity_error.to_string(),
                r.final_total_loss.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| HarnessError::Format(e.to_string()))
    }
}

/// Every point's config is built and validated before any training starts.
pub fn run_ablation(base: &TrainConfig, kind: AblationKind, grid: &[GridPoint]) -> Result<AblationTable> {
    if grid.is_empty() {
        return Err(HarnessError::Config("ablation grid is empty".into()));
    }
    let configs = grid.iter().map(|p| point_config(base, p)).collect::<Result<Vec<_>>>()?;
    let mut shared: HashMap<String, (DataSplit, Teacher)> = HashMap::new();
    let mut rows = Vec::with_capacity(grid.len());
    for (point, cfg) in grid.iter().zip(&configs) {
        let key = cfg.teacher_key();
        if !shared.contains_key(&key) {
            let data = build_data(cfg)?;
            let teacher = prepare_teacher(cfg, &data)?;
            shared.insert(key.clone(), (data, teacher));
        }
        let (data, teacher) = &shared[&key];
        let report = train_distill_with_teacher(cfg, data, teacher)?;
        let m = &report.metrics;
        rows.push(AblationRow {
            point: point.label(),
            mode: m.mode,
            student_frames: cfg.distill.student_frames(),
            mask_ratio: cfg.distill.mask_ratio(),
            weights: m.weights,
            heldout: m.heldout,
            final_total_loss: m.epochs.last().map_or(f64::NAN, |e| e.losses.total),
        });
    }
    Ok(AblationTable { kind, seed: base.seed, rows })
}
