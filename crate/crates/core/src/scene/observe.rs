use serde::{Deserialize, Serialize};

use crate::autodiff::{RandomSource, Tensor};
use crate::error::{Error, Result};
use crate::scene::kinematics::{SceneSample, SCENE_EXTENT};

/// Per-query observation channels for the query's tracked object:
/// `[w, dx/σ, dy/σ, w·size]` with `w = exp(−d²/2σ²)`, offsets taken from the
/// ego-compensated anchor and clipped to `±OFFSET_CLIP`.
pub const OBSERVATION_DIM: usize = 4;
/// Raster channels: `[occupancy, size]`.
pub const RASTER_CHANNELS: usize = 2;

pub const OFFSET_CLIP: f64 = 10.0;

const NOISE_STREAM: u64 = 0x000b_5e7e;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    /// Gaussian radius of a query's receptive field (meters).
    pub sigma: f64,
    /// Standard deviation of additive observation noise.
    pub noise: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig { sigma: 10.0, noise: 0.3 }
    }
}

/// Static world-fixed query anchors on a square grid over the BEV extent,
/// in current-frame coordinates. Query `q` sits at row `q / side`, column
/// `q % side`.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryLayout {
    anchors: Vec<[f64; 2]>,
    height: usize,
    width: usize,
}

impl QueryLayout {
    pub fn new(queries: usize, height: usize, width: usize) -> Result<Self> {
        let side = (queries as f64).sqrt().round() as usize;
        if side == 0 || side * side != queries {
            return Err(Error::InvalidArgument(format!("query count {queries} is not a positive square")));
        }
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("raster must be non-empty".into()));
        }
        let step = 2.0 * SCENE_EXTENT / side as f64;
        let anchors = (0..queries)
            .map(|q| {
                let (r, c) = (q / side, q % side);
                [-SCENE_EXTENT + (c as f64 + 0.5) * step, -SCENE_EXTENT + (r as f64 + 0.5) * step]
            })
            .collect();
        Ok(QueryLayout { anchors, height, width })
    }

    pub fn queries(&self) -> usize {
        self.anchors.len()
    }

    pub fn anchors(&self) -> &[[f64; 2]] {
        &self.anchors
    }

    pub fn raster(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Row-major raster cell containing `p`, clamped to the border.
    pub fn cell(&self, p: [f64; 2]) -> usize {
        let idx = |v: f64, n: usize| {
            let f = ((v + SCENE_EXTENT) / (2.0 * SCENE_EXTENT) * n as f64).floor();
            f.clamp(0.0, (n - 1) as f64) as usize
        };
        idx(p[1], self.height) * self.width + idx(p[0], self.width)
    }

    /// `anchor` in frame-`t` coordinates: a world-fixed point only moves by
    /// the accumulated ego translation.
    pub fn anchor_at(&self, q: usize, t: usize, ego: &[[f64; 2]]) -> [f64; 2] {
        let mut p = self.anchors[q];
        for step in &ego[..t] {
            p[0] += step[0];
            p[1] += step[1];
        }
        p
    }
}

/// Everything the toy encoders see of one scene, frame 0 first.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneObservation {
    /// Per frame, `Nq × OBSERVATION_DIM`.
    pub queries: Vec<Tensor>,
    /// Per frame, `(H·W) × RASTER_CHANNELS`, cells row-major.
    pub raster: Vec<Tensor>,
    /// Per frame, the raster cell under each query's anchor.
    pub cells: Vec<Vec<usize>>,
    pub height: usize,
    pub width: usize,
}

impl SceneObservation {
    pub fn frames(&self) -> usize {
        self.queries.len()
    }
}

fn footprint(extent: [f64; 3]) -> f64 {
    (extent[0] * extent[1]).sqrt() / 3.0
}

/// For each query, the object nearest its anchor at the current frame
/// (lowest index on ties).
pub fn tracked_objects(scene: &SceneSample, layout: &QueryLayout) -> Vec<usize> {
    layout
        .anchors()
        .iter()
        .map(|a| {
            let mut best = (0, f64::INFINITY);
            for k in 0..scene.objects.len() {
                let p = scene.object_position(k, 0);
                let d2 = (p[0] - a[0]).powi(2) + (p[1] - a[1]).powi(2);
                if d2 < best.1 {
                    best = (k, d2);
                }
            }
            best.0
        })
        .collect()
}

/// Renders noisy per-query and raster observations. Each query follows one
/// object through every frame. Noise is drawn from a stream derived from
/// the scene seed, so the result is a pure function of the scene, layout
/// and sensor settings.
pub fn observe(scene: &SceneSample, layout: &QueryLayout, sensor: &SensorConfig) -> SceneObservation {
    let mut rng = RandomSource::new(RandomSource::derive(scene.seed, NOISE_STREAM));
    let (h, w) = layout.raster();
    let nq = layout.queries();
    let inv_two_var = 1.0 / (2.0 * sensor.sigma * sensor.sigma);
    let tracked = tracked_objects(scene, layout);
    let mut out = SceneObservation { queries: Vec::new(), raster: Vec::new(), cells: Vec::new(), height: h, width: w };
    for t in 0..scene.frames {
        let positions: Vec<[f64; 2]> = (0..scene.objects.len()).map(|k| scene.object_position(k, t)).collect();
        let mut q_obs = vec![0.0; nq * OBSERVATION_DIM];
        let mut cells = Vec::with_capacity(nq);
        for q in 0..nq {
            let a = layout.anchor_at(q, t, &scene.ego_motion);
            cells.push(layout.cell(a));
            let row = &mut q_obs[q * OBSERVATION_DIM..(q + 1) * OBSERVATION_DIM];
            let k = tracked[q];
            let d2 = (positions[k][0] - a[0]).powi(2) + (positions[k][1] - a[1]).powi(2);
            let wt = (-d2 * inv_two_var).exp();
            let clip = |v: f64| (v / sensor.sigma).clamp(-OFFSET_CLIP, OFFSET_CLIP);
            row[0] = wt;
            row[1] = clip(positions[k][0] - a[0]);
            row[2] = clip(positions[k][1] - a[1]);
            row[3] = wt * footprint(scene.objects[k].extent);
        }
        for v in &mut q_obs {
            *v += sensor.noise * rng.normal();
        }
        let mut raster = vec![0.0; h * w * RASTER_CHANNELS];
        for (k, p) in positions.iter().enumerate() {
            if p[0].abs() >= SCENE_EXTENT || p[1].abs() >= SCENE_EXTENT {
                continue;
            }
            let c = layout.cell(*p);
            raster[c * RASTER_CHANNELS] += 1.0;
            raster[c * RASTER_CHANNELS + 1] += footprint(scene.objects[k].extent);
        }
        for v in &mut raster {
            *v += sensor.noise * rng.normal();
        }
        out.queries.push(Tensor::from_parts(vec![nq, OBSERVATION_DIM], q_obs));
        out.raster.push(Tensor::from_parts(vec![h * w, RASTER_CHANNELS], raster));
        out.cells.push(cells);
    }
    out
}
