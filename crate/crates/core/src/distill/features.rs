use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{shape_err, Error, Result};

/// Index of the final FPN level, the only one that gets temporal
/// reconstruction.
pub const FINAL_PV_LEVEL: u8 = 3;

/// Sparse BEV query features, `frames×queries×channels`. Frame 0 is the
/// current timestamp; larger indices are older.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    values: Tensor,
}

impl FeatureSet {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.rank() != 3 {
            return Err(shape_err("feature_set", format!("expected T×Nq×C, got {:?}", values.shape())));
        }
        Ok(FeatureSet { values })
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn queries(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_values(self) -> Tensor {
        self.values
    }

    pub fn frame(&self, t: usize) -> Result<Tensor> {
        self.values.frame(t)
    }

    /// The `count` most recent frames.
    pub fn recent(&self, count: usize) -> Result<FeatureSet> {
        FeatureSet::new(self.values.leading(count)?)
    }
}

/// Perspective-view feature maps, `frames×channels×height×width`, from one
/// FPN level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvFeatureSet {
    values: Tensor,
    level: u8,
}

impl PvFeatureSet {
    pub fn new(values: Tensor, level: u8) -> Result<Self> {
        let s = values.shape();
        if s.len() != 4 {
            return Err(shape_err("pv_feature_set", format!("expected T×C×H×W, got {s:?}")));
        }
        if s[2] < 3 || s[3] < 3 {
            return Err(shape_err("pv_feature_set", format!("spatial extent {}x{} below 3x3", s[2], s[3])));
        }
        if level > FINAL_PV_LEVEL {
            return Err(Error::InvalidArgument(format!("FPN level {level} out of range 0..=3")));
        }
        Ok(PvFeatureSet { values, level })
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[3]
    }

    pub fn level(&self) -> u8 {
        self.level
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn recent(&self, count: usize) -> Result<PvFeatureSet> {
        PvFeatureSet::new(self.values.leading(count)?, self.level)
    }
}

/// Decoder output `queries×channels` that the decoded-feature loss aligns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedFeatures {
    values: Tensor,
}

impl DecodedFeatures {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.rank() != 2 {
            return Err(shape_err("decoded_features", format!("expected Nq×C, got {:?}", values.shape())));
        }
        Ok(DecodedFeatures { values })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }
}

/// `F_i F_jᵀ` for one ordered frame pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub frames: (usize, usize),
    pub values: Tensor,
}
