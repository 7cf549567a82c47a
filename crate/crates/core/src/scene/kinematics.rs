use std::f64::consts::PI;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::autodiff::RandomSource;
use crate::error::{Error, Result};

/// Seconds between adjacent frames.
pub const FRAME_INTERVAL: f64 = 0.5;
/// Half-width of the square BEV extent objects start in (meters).
pub const SCENE_EXTENT: f64 = 50.0;
pub const MAX_SPEED: f64 = 15.0;
pub const MAX_EGO_STEP: f64 = 5.0;

/// A sparse query box: position, extent, yaw and velocity in one frame's
/// ego coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
    pub l: f64,
    pub h: f64,
    pub yaw: f64,
    pub vx: f64,
    pub vy: f64,
}

impl QueryState {
    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn velocity(&self) -> [f64; 2] {
        [self.vx, self.vy]
    }
}

/// One object with constant velocity. `position` is where it sits at the
/// current frame, in current-frame coordinates (the scene's world frame).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub position: [f64; 2],
    pub z: f64,
    pub velocity: [f64; 2],
    /// `[w, l, h]`, all positive.
    pub extent: [f64; 3],
    pub yaw: f64,
}

/// Frame 0 is the current frame, frame `T − 1` the oldest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSample {
    pub seed: u64,
    pub frames: usize,
    pub frame_interval: f64,
    pub objects: Vec<SceneObject>,
    /// `ego_motion[t]` is the observer's translation from frame `t + 1` to
    /// frame `t`; the last entry is zero.
    pub ego_motion: Vec<[f64; 2]>,
    /// Object states at frame 0, in frame-0 coordinates.
    pub ground_truth: Vec<QueryState>,
}

fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

pub fn generate_scene(seed: u64, objects: usize, frames: usize) -> Result<SceneSample> {
    if objects == 0 || frames == 0 {
        return Err(Error::InvalidArgument(format!(
            "a scene needs at least one object and one frame, got {objects} and {frames}"
        )));
    }
    let mut rng = RandomSource::new(seed);
    let objects: Vec<SceneObject> = (0..objects)
        .map(|_| {
            let position = [rng.range(-SCENE_EXTENT, SCENE_EXTENT), rng.range(-SCENE_EXTENT, SCENE_EXTENT)];
            let speed = rng.range(0.0, MAX_SPEED);
            let heading = rng.range(-PI, PI);
            let extent = [rng.range(1.5, 2.5), rng.range(3.5, 5.5), rng.range(1.4, 2.0)];
            let z = rng.range(-1.0, 1.0);
            SceneObject {
                position,
                z,
                velocity: [speed * heading.cos(), speed * heading.sin()],
                extent,
                yaw: wrap_angle(heading),
            }
        })
        .collect();
    let mut ego_motion: Vec<[f64; 2]> = (0..frames - 1)
        .map(|_| [rng.range(-MAX_EGO_STEP, MAX_EGO_STEP), rng.range(-MAX_EGO_STEP, MAX_EGO_STEP)])
        .collect();
    ego_motion.push([0.0, 0.0]);
    let mut scene = SceneSample {
        seed,
        frames,
        frame_interval: FRAME_INTERVAL,
        objects,
        ego_motion,
        ground_truth: Vec::new(),
    };
    scene.ground_truth = (0..scene.objects.len()).map(|k| scene.object_state(k, 0)).collect();
    Ok(scene)
}

impl SceneSample {
    /// Observer position at frame `t` in current-frame coordinates.
    pub fn ego_position(&self, t: usize) -> [f64; 2] {
        let mut p = [0.0, 0.0];
        for step in &self.ego_motion[..t] {
            p[0] -= step[0];
            p[1] -= step[1];
        }
        p
    }

    /// Object `k` at frame `t`, in frame-`t` coordinates. Elapsed time is
    /// negative for past frames.
    pub fn object_state(&self, k: usize, t: usize) -> QueryState {
        let o = &self.objects[k];
        let elapsed = -(t as f64) * self.frame_interval;
        let ego = self.ego_position(t);
        QueryState {
            x: o.position[0] + o.velocity[0] * elapsed - ego[0],
            y: o.position[1] + o.velocity[1] * elapsed - ego[1],
            z: o.z,
            w: o.extent[0],
            l: o.extent[1],
            h: o.extent[2],
            yaw: o.yaw,
            vx: o.velocity[0],
            vy: o.velocity[1],
        }
    }

    pub fn object_position(&self, k: usize, t: usize) -> [f64; 2] {
        self.object_state(k, t).position()
    }
}

/// Moves a current-frame state `offset` frames into the past: back along its
/// velocity and through the accumulated ego translations `ego[0..offset]`.
pub fn ego_align(q: &QueryState, offset: usize, ego: &[[f64; 2]]) -> Result<QueryState> {
    ego_align_with_interval(q, offset, ego, FRAME_INTERVAL)
}

pub fn ego_align_with_interval(q: &QueryState, offset: usize, ego: &[[f64; 2]], interval: f64) -> Result<QueryState> {
    if offset > ego.len() {
        return Err(Error::InvalidArgument(format!(
            "offset {offset} exceeds {} recorded ego steps",
            ego.len()
        )));
    }
    let elapsed = offset as f64 * interval;
    let mut out = *q;
    out.x -= q.vx * elapsed;
    out.y -= q.vy * elapsed;
    for step in &ego[..offset] {
        out.x += step[0];
        out.y += step[1];
    }
    Ok(out)
}

/// One JSON object per line.
pub fn write_scenes<W: Write>(mut out: W, scenes: &[SceneSample]) -> Result<()> {
    for s in scenes {
        let line = serde_json::to_string(s).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::Io(e.to_string()))?;
    }
    Ok(())
}

/// Blank lines are skipped.
pub fn read_scenes<R: BufRead>(input: R) -> Result<Vec<SceneSample>> {
    let mut scenes = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: SceneSample =
            serde_json::from_str(&line).map_err(|e| Error::Record { line: i + 1, detail: e.to_string() })?;
        if s.frames == 0 || s.ego_motion.len() != s.frames || s.objects.is_empty() {
            return Err(Error::Record { line: i + 1, detail: "inconsistent frame or object counts".into() });
        }
        scenes.push(s);
    }
    Ok(scenes)
}
