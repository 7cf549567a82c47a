//! Temporal distillation losses: masked temporal feature reconstruction for
//! BEV and PV features, spatial reconstruction for lower PV levels,
//! relational distillation across frames, decoded-feature alignment, and the
//! mode-gated weighted total.

mod config;
mod features;
mod generator;
pub mod losses;
mod mask;

pub use config::{
    total_distill_loss, Component, DistillConfig, DistillSettings, FrameMode, LossComponents, LossWeights,
    ABLATION_RC_BEV_WEIGHT, DEFAULT_MASK_RATIO, DEFAULT_TEMPERATURE, DEFAULT_WEIGHTS,
};
pub use features::{DecodedFeatures, FeatureSet, PvFeatureSet, SimilarityMatrix, FINAL_PV_LEVEL};
pub use generator::{Generator, GeneratorKind, GeneratorVars};
pub use losses::{pv_tsa_aggregate, tsa_aggregate, tsa_attention_weights};
pub use mask::{generate_mask, MaskPlan};

use crate::autodiff::{Graph, Tensor};
use crate::error::Result;

/// Value-level generator application to masked features.
pub fn generate_features(masked: &Tensor, generator: &Generator) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.constant(masked.clone());
    let vars = generator.bind_frozen_vars(&mut g);
    let y = vars.generate(&mut g, x)?;
    Ok(g.value(y).clone())
}

impl FeatureSet {
    /// `F_i F_jᵀ` for frames `i ≠ j` (0-based).
    pub fn similarity(&self, i: usize, j: usize) -> Result<SimilarityMatrix> {
        let mut g = Graph::new();
        let f = g.constant(self.values().clone());
        let s = losses::similarity(&mut g, f, i, j)?;
        Ok(SimilarityMatrix { frames: (i, j), values: g.value(s).clone() })
    }
}
