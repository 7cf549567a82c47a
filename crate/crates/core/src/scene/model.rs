use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Parameterized, RandomSource, Tensor, Var};
use crate::distill::{DecodedFeatures, FeatureSet, PvFeatureSet, FINAL_PV_LEVEL};
use crate::error::{shape_err, Error, Result};
use crate::scene::observe::{SceneObservation, OBSERVATION_DIM, RASTER_CHANNELS};

/// PV level the spatial reconstruction term reads.
pub const SPATIAL_PV_LEVEL: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Teacher,
    Student,
}

fn glorot(rows: usize, cols: usize, rng: &mut RandomSource) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::uniform(&[rows, cols], -bound, bound, rng)
}

/// Per-frame observation embedding plus a shared PV pathway and one
/// residual self-attention layer over queries.
///
/// Frame `t` of the input is embedded with `embed[t]`, so the encoder
/// accepts at most `frames()` input frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoder {
    role: Role,
    channels: usize,
    embed_w: Vec<Tensor>,
    embed_b: Vec<Tensor>,
    pv1_w: Tensor,
    pv1_b: Tensor,
    pv2_w: Tensor,
    pv2_b: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
}

/// Encoder outputs registered in a graph.
#[derive(Debug, Clone, Copy)]
pub struct EncodedVars {
    /// `T × Nq × C`.
    pub bev: Var,
    /// `T × C × H × W`, final PV level.
    pub pv_final: Var,
    /// `T × C × H × W`, the level below.
    pub pv_spatial: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub bev: FeatureSet,
    pub pv: PvFeatureSet,
    pub pv_spatial: PvFeatureSet,
}

impl ToyEncoder {
    pub fn random(role: Role, frames: usize, channels: usize, rng: &mut RandomSource) -> Self {
        let mut embed_w = Vec::with_capacity(frames);
        for _ in 0..frames {
            embed_w.push(glorot(OBSERVATION_DIM, channels, rng));
        }
        ToyEncoder {
            role,
            channels,
            embed_w,
            embed_b: vec![Tensor::zeros(&[channels]); frames],
            pv1_w: glorot(RASTER_CHANNELS, channels, rng),
            pv1_b: Tensor::zeros(&[channels]),
            pv2_w: glorot(channels, channels, rng),
            pv2_b: Tensor::zeros(&[channels]),
            wq: glorot(channels, channels, rng),
            wk: glorot(channels, channels, rng),
            wv: glorot(channels, channels, rng),
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn frames(&self) -> usize {
        self.embed_w.len()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Sets every bias to zero, leaving weights untouched.
    pub fn zero_biases(&mut self) {
        for b in self.embed_b.iter_mut().chain([&mut self.pv1_b, &mut self.pv2_b]) {
            *b = Tensor::zeros(&[self.channels]);
        }
    }

    /// Builds the forward pass over the first `frames` observed frames.
    /// `params` must come from `bind` or `bind_frozen` on this encoder.
    pub fn forward(&self, g: &mut Graph, params: &[Var], obs: &SceneObservation, frames: usize) -> Result<EncodedVars> {
        if frames == 0 || frames > obs.frames() || frames > self.frames() {
            return Err(Error::InvalidArgument(format!(
                "cannot encode {frames} frames: scene has {}, encoder accepts {}",
                obs.frames(),
                self.frames()
            )));
        }
        let n = self.frames();
        let (embed_w, rest) = params.split_at(n);
        let (embed_b, rest) = rest.split_at(n);
        let [pv1_w, pv1_b, pv2_w, pv2_b, wq, wk, wv] = rest else {
            return Err(shape_err("encoder", format!("expected {} parameter vars, got {}", 2 * n + 7, params.len())));
        };
        let c = self.channels;
        let (h, w) = (obs.height, obs.width);
        let inv_sqrt_c = 1.0 / (c as f64).sqrt();

        let mut bev = Vec::with_capacity(frames);
        let mut pv3s = Vec::with_capacity(frames);
        let mut pv2s = Vec::with_capacity(frames);
        for t in 0..frames {
            let raster = g.constant(obs.raster[t].clone());
            let l2 = g.matmul(raster, *pv1_w)?;
            let l2 = g.add_bias(l2, *pv1_b)?;
            let l2 = g.tanh(l2);
            let l3 = g.matmul(l2, *pv2_w)?;
            let l3 = g.add_bias(l3, *pv2_b)?;
            let l3 = g.tanh(l3);

            let x = g.constant(obs.queries[t].clone());
            let e = g.matmul(x, embed_w[t])?;
            let e = g.add_bias(e, embed_b[t])?;
            let pooled = g.gather_rows(l3, &obs.cells[t])?;
            let e = g.add(e, pooled)?;
            let e = g.tanh(e);

            let q = g.matmul(e, *wq)?;
            let k = g.matmul(e, *wk)?;
            let v = g.matmul(e, *wv)?;
            let kt = g.transpose(k)?;
            let logits = g.matmul(q, kt)?;
            let logits = g.scale(logits, inv_sqrt_c);
            let attn = g.softmax_rows(logits)?;
            let mixed = g.matmul(attn, v)?;
            bev.push(g.add(e, mixed)?);

            for (level, out) in [(l2, &mut pv2s), (l3, &mut pv3s)] {
                let chw = g.transpose(level)?;
                out.push(g.reshape(chw, &[c, h, w])?);
            }
        }
        Ok(EncodedVars { bev: g.stack(&bev)?, pv_final: g.stack(&pv3s)?, pv_spatial: g.stack(&pv2s)? })
    }

    /// Value-level forward over the first `frames` frames.
    pub fn encode(&self, obs: &SceneObservation, frames: usize) -> Result<Encoding> {
        let mut g = Graph::new();
        let params = self.bind_frozen(&mut g);
        let out = self.forward(&mut g, &params, obs, frames)?;
        Ok(Encoding {
            bev: FeatureSet::new(g.value(out.bev).clone())?,
            pv: PvFeatureSet::new(g.value(out.pv_final).clone(), FINAL_PV_LEVEL)?,
            pv_spatial: PvFeatureSet::new(g.value(out.pv_spatial).clone(), SPATIAL_PV_LEVEL)?,
        })
    }
}

impl Parameterized for ToyEncoder {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.embed_w.iter().chain(&self.embed_b).collect();
        v.extend([&self.pv1_w, &self.pv1_b, &self.pv2_w, &self.pv2_b, &self.wq, &self.wk, &self.wv]);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.embed_w.iter_mut().chain(self.embed_b.iter_mut()).collect();
        v.extend([
            &mut self.pv1_w,
            &mut self.pv1_b,
            &mut self.pv2_w,
            &mut self.pv2_b,
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
        ]);
        v
    }
}

/// Output scale of the regression head, `[x, y, vx, vy]`.
pub const REGRESSION_SCALE: [f64; 4] = [10.0, 10.0, 5.0, 5.0];

/// Temporal mean, then a two-layer perceptron. The first layer's output is
/// the decoded feature; the second feeds a scaled regression head plus a
/// learned per-query prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDecoder {
    channels: usize,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
    /// `Nq × 4`, initialized to the query anchors with zero velocity.
    prior: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct DecodedVars {
    /// `Nq × C`.
    pub decoded: Var,
    /// `Nq × 4` rows of `[x, y, vx, vy]`.
    pub predictions: Var,
}

impl ToyDecoder {
    pub fn random(channels: usize, anchors: &[[f64; 2]], rng: &mut RandomSource) -> Self {
        let nq = anchors.len();
        ToyDecoder {
            channels,
            w1: glorot(channels, channels, rng),
            b1: Tensor::zeros(&[channels]),
            w2: glorot(channels, 4, rng),
            b2: Tensor::zeros(&[4]),
            prior: Tensor::from_fn(&[nq, 4], |i| if i % 4 < 2 { anchors[i / 4][i % 4] } else { 0.0 }),
        }
    }

    pub fn zeros(channels: usize, queries: usize) -> Self {
        ToyDecoder {
            channels,
            w1: Tensor::zeros(&[channels, channels]),
            b1: Tensor::zeros(&[channels]),
            w2: Tensor::zeros(&[channels, 4]),
            b2: Tensor::zeros(&[4]),
            prior: Tensor::zeros(&[queries, 4]),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn queries(&self) -> usize {
        self.prior.shape()[0]
    }

    /// `features: T × Nq × C`; `params` from `bind` or `bind_frozen`.
    pub fn forward(&self, g: &mut Graph, params: &[Var], features: Var) -> Result<DecodedVars> {
        let [w1, b1, w2, b2, prior] = params else {
            return Err(shape_err("decoder", format!("expected 5 parameter vars, got {}", params.len())));
        };
        let s = g.value(features).shape().to_vec();
        if s.len() != 3 || s[1] != self.queries() || s[2] != self.channels {
            return Err(shape_err(
                "decoder",
                format!("features {s:?} for {} queries × {} channels", self.queries(), self.channels),
            ));
        }
        let mut pooled = g.frame(features, 0)?;
        for t in 1..s[0] {
            let f = g.frame(features, t)?;
            pooled = g.add(pooled, f)?;
        }
        let pooled = g.scale(pooled, 1.0 / s[0] as f64);
        let d = g.matmul(pooled, *w1)?;
        let d = g.add_bias(d, *b1)?;
        let decoded = g.tanh(d);
        let r = g.matmul(decoded, *w2)?;
        let r = g.add_bias(r, *b2)?;
        let scale = g.constant(Tensor::from_fn(&[s[1], 4], |i| REGRESSION_SCALE[i % 4]));
        let r = g.mul(r, scale)?;
        let predictions = g.add(r, *prior)?;
        Ok(DecodedVars { decoded, predictions })
    }

    /// Value-level decode: decoded features and `Nq × 4` predictions.
    pub fn decode_and_regress(&self, features: &FeatureSet) -> Result<(DecodedFeatures, Tensor)> {
        let mut g = Graph::new();
        let params = self.bind_frozen(&mut g);
        let f = g.constant(features.values().clone());
        let out = self.forward(&mut g, &params, f)?;
        Ok((DecodedFeatures::new(g.value(out.decoded).clone())?, g.value(out.predictions).clone()))
    }
}

impl Parameterized for ToyDecoder {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2, &self.prior]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2, &mut self.prior]
    }
}
