use serde::{Deserialize, Serialize};

pub const DEFAULT_TOLERANCE: f64 = 1e-5;

/// Denominator floor for [`relative_error`]; below it the comparison is
/// effectively absolute.
const REL_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn compare(name: impl Into<String>, analytic: &[f64], numeric: &[f64], tolerance: f64) -> Self {
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        let mut consistent = analytic.len() == numeric.len();
        for (a, n) in analytic.iter().zip(numeric) {
            if !a.is_finite() || !n.is_finite() {
                consistent = false;
            }
            max_abs = max_abs.max((a - n).abs());
            max_rel = max_rel.max(relative_error(*a, *n));
        }
        if !consistent {
            max_rel = f64::INFINITY;
        }
        GradCheckReport {
            name: name.into(),
            max_rel_error: max_rel,
            max_abs_error: max_abs,
            tolerance,
            passed: max_rel < tolerance,
        }
    }

    /// Folds another comparison for the same operation into this one.
    pub fn merge(&mut self, other: &GradCheckReport) {
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.max_abs_error = self.max_abs_error.max(other.max_abs_error);
        self.passed = self.max_rel_error < self.tolerance;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_flag_tracks_tolerance() {
        let ok = GradCheckReport::compare("x", &[1.0, 2.0], &[1.0 + 1e-9, 2.0], 1e-5);
        assert!(ok.passed);
        let bad = GradCheckReport::compare("x", &[1.0, 2.0], &[1.1, 2.0], 1e-5);
        assert!(!bad.passed);
        assert!((bad.max_abs_error - 0.1).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_fails() {
        assert!(!GradCheckReport::compare("x", &[1.0], &[1.0, 2.0], 1e-5).passed);
    }
}
