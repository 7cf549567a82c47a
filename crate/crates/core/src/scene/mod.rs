//! Synthetic multi-frame driving scenes and the toy encoder/decoder pair
//! that turns them into distillation-ready features.
//!
//! Coordinates are meters in a frame's own ego coordinates. Frame 0 is the
//! current frame; larger indices are older.

mod kinematics;
mod model;
mod observe;
mod task;

pub use kinematics::{
    ego_align, ego_align_with_interval, generate_scene, read_scenes, write_scenes, QueryState, SceneObject,
    SceneSample, FRAME_INTERVAL, MAX_EGO_STEP, MAX_SPEED, SCENE_EXTENT,
};
pub use model::{
    DecodedVars, EncodedVars, Encoding, Role, ToyDecoder, ToyEncoder, REGRESSION_SCALE, SPATIAL_PV_LEVEL,
};
pub use observe::{observe, tracked_objects, QueryLayout, SceneObservation, SensorConfig, OBSERVATION_DIM, OFFSET_CLIP, RASTER_CHANNELS};
pub use task::{match_objects, task_errors, task_loss, task_loss_node, TaskErrors};
