use std::fmt;

use serde::{Deserialize, Serialize};

use crate::distill::losses::MAX_EXTRA_TEACHER_FRAMES;
use crate::error::{Error, Result};

pub const DEFAULT_MASK_RATIO: f64 = 0.5;
pub const DEFAULT_TEMPERATURE: f64 = 0.5;
/// Default `(α_rc_bev, α_rc_pv, α_dc, α_trd)` before mode gating.
pub const DEFAULT_WEIGHTS: LossWeights = LossWeights { rc_bev: 5e-4, rc_pv: 1e-3, dc: 1.0, trd: 1.0 };
/// The BEV weight that the weight ablation found best; available as an override.
pub const ABLATION_RC_BEV_WEIGHT: f64 = 5e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    RcBev,
    RcPv,
    Dc,
    Trd,
}

impl Component {
    pub const ALL: [Component; 4] = [Component::RcBev, Component::RcPv, Component::Dc, Component::Trd];

    pub fn name(self) -> &'static str {
        match self {
            Component::RcBev => "rc_bev",
            Component::RcPv => "rc_pv",
            Component::Dc => "dc",
            Component::Trd => "trd",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Whether the student sees fewer frames than the teacher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrameMode {
    PartialFrames,
    FullFrames,
}

impl FrameMode {
    pub fn from_frames(student: usize, teacher: usize) -> FrameMode {
        if student < teacher {
            FrameMode::PartialFrames
        } else {
            FrameMode::FullFrames
        }
    }

    /// Components this mode may weight with a nonzero coefficient.
    pub fn permits(self, c: Component) -> bool {
        match self {
            FrameMode::PartialFrames => c != Component::Trd,
            FrameMode::FullFrames => !matches!(c, Component::RcBev | Component::RcPv),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub rc_bev: f64,
    pub rc_pv: f64,
    pub dc: f64,
    pub trd: f64,
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights { rc_bev: 0.0, rc_pv: 0.0, dc: 0.0, trd: 0.0 };

    pub fn get(&self, c: Component) -> f64 {
        match c {
            Component::RcBev => self.rc_bev,
            Component::RcPv => self.rc_pv,
            Component::Dc => self.dc,
            Component::Trd => self.trd,
        }
    }

    pub fn set(&mut self, c: Component, v: f64) {
        match c {
            Component::RcBev => self.rc_bev = v,
            Component::RcPv => self.rc_pv = v,
            Component::Dc => self.dc = v,
            Component::Trd => self.trd = v,
        }
    }

    /// Components with a nonzero weight.
    pub fn active(&self) -> Vec<Component> {
        Component::ALL.into_iter().filter(|&c| self.get(c) != 0.0).collect()
    }
}

/// One optional value per loss component.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents<T> {
    pub rc_bev: Option<T>,
    pub rc_pv: Option<T>,
    pub dc: Option<T>,
    pub trd: Option<T>,
}

impl<T: Copy> LossComponents<T> {
    pub fn get(&self, c: Component) -> Option<T> {
        match c {
            Component::RcBev => self.rc_bev,
            Component::RcPv => self.rc_pv,
            Component::Dc => self.dc,
            Component::Trd => self.trd,
        }
    }

    pub fn set(&mut self, c: Component, v: T) {
        match c {
            Component::RcBev => self.rc_bev = Some(v),
            Component::RcPv => self.rc_pv = Some(v),
            Component::Dc => self.dc = Some(v),
            Component::Trd => self.trd = Some(v),
        }
    }
}

/// User-facing settings. Unset weights take their defaults and are then
/// gated by the frame mode; explicitly set weights must already respect the
/// gating rule.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillSettings {
    pub mask_ratio: Option<f64>,
    pub temperature: Option<f64>,
    pub alpha_rc_bev: Option<f64>,
    pub alpha_rc_pv: Option<f64>,
    pub alpha_dc: Option<f64>,
    pub alpha_trd: Option<f64>,
    pub student_frames: Option<usize>,
    pub teacher_frames: Option<usize>,
    pub queries: Option<usize>,
    pub channels: Option<usize>,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub seed: Option<u64>,
}

/// Validated distillation configuration. Construction enforces the frame
/// mode gating: full frames ⇒ `α_rc_bev = α_rc_pv = 0`, partial frames ⇒
/// `α_trd = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistillConfig {
    mask_ratio: f64,
    temperature: f64,
    weights: LossWeights,
    student_frames: usize,
    teacher_frames: usize,
    queries: usize,
    channels: usize,
    height: usize,
    width: usize,
    seed: u64,
    mode: FrameMode,
}

impl DistillConfig {
    pub fn new(s: &DistillSettings) -> Result<Self> {
        let student_frames = s.student_frames.unwrap_or(4);
        let teacher_frames = s.teacher_frames.unwrap_or(8);
        if student_frames == 0 || teacher_frames < student_frames {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= student_frames <= teacher_frames, got {student_frames} and {teacher_frames}"
            )));
        }
        if teacher_frames - student_frames >= MAX_EXTRA_TEACHER_FRAMES {
            return Err(Error::InvalidArgument(format!(
                "teacher may have at most 7 extra frames, got {}",
                teacher_frames - student_frames
            )));
        }
        let mode = FrameMode::from_frames(student_frames, teacher_frames);

        let explicit = [
            (Component::RcBev, s.alpha_rc_bev),
            (Component::RcPv, s.alpha_rc_pv),
            (Component::Dc, s.alpha_dc),
            (Component::Trd, s.alpha_trd),
        ];
        let mut weights = DEFAULT_WEIGHTS;
        for (c, value) in explicit {
            match value {
                Some(v) => {
                    if !(v.is_finite() && v >= 0.0) {
                        return Err(Error::InvalidArgument(format!("weight for {c} must be finite and >= 0, got {v}")));
                    }
                    weights.set(c, v);
                }
                None if !mode.permits(c) => weights.set(c, 0.0),
                None => {}
            }
        }

        let cfg = DistillConfig {
            mask_ratio: s.mask_ratio.unwrap_or(DEFAULT_MASK_RATIO),
            temperature: s.temperature.unwrap_or(DEFAULT_TEMPERATURE),
            weights,
            student_frames,
            teacher_frames,
            queries: s.queries.unwrap_or(16),
            channels: s.channels.unwrap_or(8),
            height: s.height.unwrap_or(8),
            width: s.width.unwrap_or(8),
            seed: s.seed.unwrap_or(7),
            mode,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(Error::InvalidArgument(format!("mask ratio {} outside [0, 1]", self.mask_ratio)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.queries == 0 || self.channels == 0 {
            return Err(Error::InvalidArgument("queries and channels must be positive".into()));
        }
        if self.height < 3 || self.width < 3 {
            return Err(Error::InvalidArgument(format!("PV maps must be at least 3x3, got {}x{}", self.height, self.width)));
        }
        for c in Component::ALL {
            if self.weights.get(c) != 0.0 && !self.mode.permits(c) {
                return Err(Error::Gating(format!(
                    "{c} must have weight 0 in {:?} mode (student {} frames, teacher {})",
                    self.mode, self.student_frames, self.teacher_frames
                )));
            }
        }
        Ok(())
    }

    /// Replaces the loss weights, re-checking the gating rule.
    pub fn with_weights(&self, weights: LossWeights) -> Result<Self> {
        let mut next = self.clone();
        next.weights = weights;
        for c in Component::ALL {
            let v = weights.get(c);
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("weight for {c} must be finite and >= 0, got {v}")));
            }
        }
        next.validate()?;
        Ok(next)
    }

    pub fn with_mask_ratio(&self, ratio: f64) -> Result<Self> {
        let mut next = self.clone();
        next.mask_ratio = ratio;
        next.validate()?;
        Ok(next)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut next = self.clone();
        next.seed = seed;
        next
    }

    pub fn mask_ratio(&self) -> f64 {
        self.mask_ratio
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn weights(&self) -> LossWeights {
        self.weights
    }

    pub fn student_frames(&self) -> usize {
        self.student_frames
    }

    pub fn teacher_frames(&self) -> usize {
        self.teacher_frames
    }

    /// Extra teacher frames, `T_tea − T_stu`.
    pub fn extra_frames(&self) -> usize {
        self.teacher_frames - self.student_frames
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mode(&self) -> FrameMode {
        self.mode
    }
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig::new(&DistillSettings::default()).expect("defaults are valid")
    }
}

/// `Σ αᵢ·Lᵢ` over components with nonzero weight. Zero-weight components
/// are skipped and may be absent; a value supplied for a component the
/// frame mode forbids is rejected.
pub fn total_distill_loss(cfg: &DistillConfig, components: &LossComponents<f64>) -> Result<f64> {
    let mut total = 0.0;
    for c in Component::ALL {
        if components.get(c).is_some() && !cfg.mode().permits(c) {
            return Err(Error::Gating(format!("{c} is not evaluated in {:?} mode", cfg.mode())));
        }
        let w = cfg.weights().get(c);
        if w == 0.0 {
            continue;
        }
        let v = components
            .get(c)
            .ok_or_else(|| Error::InvalidArgument(format!("{c} has weight {w} but no value")))?;
        total += w * v;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(student: usize, teacher: usize) -> DistillSettings {
        DistillSettings { student_frames: Some(student), teacher_frames: Some(teacher), ..Default::default() }
    }

    #[test]
    fn defaults_follow_mode() {
        let partial = DistillConfig::new(&settings(4, 8)).unwrap();
        assert_eq!(partial.mode(), FrameMode::PartialFrames);
        assert_eq!(partial.weights(), LossWeights { trd: 0.0, ..DEFAULT_WEIGHTS });
        let full = DistillConfig::new(&settings(8, 8)).unwrap();
        assert_eq!(full.mode(), FrameMode::FullFrames);
        assert_eq!(full.weights(), LossWeights { rc_bev: 0.0, rc_pv: 0.0, ..DEFAULT_WEIGHTS });
        assert_eq!(partial.mask_ratio(), 0.5);
        assert_eq!(partial.temperature(), 0.5);
    }

    #[test]
    fn gating_violations_are_rejected() {
        let s = DistillSettings { alpha_trd: Some(1.0), ..settings(4, 8) };
        assert!(matches!(DistillConfig::new(&s), Err(Error::Gating(_))));
        let s = DistillSettings { alpha_rc_bev: Some(1e-4), ..settings(8, 8) };
        assert!(matches!(DistillConfig::new(&s), Err(Error::Gating(_))));
        let s = DistillSettings { alpha_rc_pv: Some(1e-3), ..settings(8, 8) };
        assert!(matches!(DistillConfig::new(&s), Err(Error::Gating(_))));
        let partial = DistillConfig::new(&settings(4, 8)).unwrap();
        assert!(partial.with_weights(LossWeights { trd: 0.5, ..LossWeights::ZERO }).is_err());
    }

    #[test]
    fn frame_gap_limits() {
        assert!(DistillConfig::new(&settings(1, 8)).is_ok());
        assert!(DistillConfig::new(&settings(1, 9)).is_err());
        assert!(DistillConfig::new(&settings(5, 4)).is_err());
    }

    #[test]
    fn weighted_sums() {
        let partial = DistillConfig::new(&settings(4, 8)).unwrap();
        let comps = LossComponents { rc_bev: Some(1.0), rc_pv: Some(1.0), dc: Some(1.0), trd: None };
        assert!((total_distill_loss(&partial, &comps).unwrap() - 1.0015).abs() < 1e-15);

        let zero = partial.with_weights(LossWeights::ZERO).unwrap();
        assert_eq!(total_distill_loss(&zero, &LossComponents::default()).unwrap(), 0.0);

        let full = DistillConfig::new(&settings(8, 8)).unwrap();
        let comps = LossComponents { dc: Some(0.5), trd: Some(0.25), ..Default::default() };
        assert_eq!(total_distill_loss(&full, &comps).unwrap(), 0.75);

        let bad = LossComponents { trd: Some(0.1), rc_bev: Some(1.0), rc_pv: Some(1.0), dc: Some(1.0) };
        assert!(matches!(total_distill_loss(&partial, &bad), Err(Error::Gating(_))));
        let missing = LossComponents { rc_bev: Some(1.0), ..Default::default() };
        assert!(total_distill_loss(&partial, &missing).is_err());
    }
}
