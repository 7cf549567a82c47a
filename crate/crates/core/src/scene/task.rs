use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{shape_err, Error, Result};
use crate::scene::kinematics::SceneSample;

/// For each ground-truth object, the query whose predicted position is
/// nearest (lowest index on ties).
pub fn match_objects(predictions: &Tensor, scene: &SceneSample) -> Result<Vec<usize>> {
    let s = predictions.shape();
    if s.len() != 2 || s[1] != 4 {
        return Err(shape_err("match_objects", format!("predictions must be Nq×4, got {s:?}")));
    }
    let p = predictions.data();
    Ok(scene
        .ground_truth
        .iter()
        .map(|gt| {
            let mut best = (0, f64::INFINITY);
            for q in 0..s[0] {
                let (dx, dy) = (p[q * 4] - gt.x, p[q * 4 + 1] - gt.y);
                let d = dx * dx + dy * dy;
                if d < best.1 {
                    best = (q, d);
                }
            }
            best.0
        })
        .collect())
}

fn truth_rows(scene: &SceneSample) -> Result<Tensor> {
    if scene.ground_truth.is_empty() {
        return Err(Error::Empty { op: "task_loss" });
    }
    let data = scene.ground_truth.iter().flat_map(|q| [q.x, q.y, q.vx, q.vy]).collect();
    Tensor::new(vec![scene.ground_truth.len(), 4], data)
}

/// Mean L1 over `[x, y, vx, vy]` of each object's matched query. The
/// matching is fixed from the forward values; unmatched queries get no
/// gradient.
pub fn task_loss_node(g: &mut Graph, predictions: Var, scene: &SceneSample) -> Result<Var> {
    let matched = match_objects(g.value(predictions), scene)?;
    let truth = g.constant(truth_rows(scene)?);
    let picked = g.gather_rows(predictions, &matched)?;
    let d = g.sub(picked, truth)?;
    let a = g.abs(d);
    Ok(g.reduce_mean(a))
}

pub fn task_loss(predictions: &Tensor, scene: &SceneSample) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.constant(predictions.clone());
    let l = task_loss_node(&mut g, p, scene)?;
    Ok(g.value(l).item())
}

/// Mean Euclidean position and velocity error over objects, under the same
/// matching as the task loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskErrors {
    pub position: f64,
    pub velocity: f64,
}

pub fn task_errors(predictions: &Tensor, scene: &SceneSample) -> Result<TaskErrors> {
    let matched = match_objects(predictions, scene)?;
    if matched.is_empty() {
        return Err(Error::Empty { op: "task_errors" });
    }
    let p = predictions.data();
    let (mut pos, mut vel) = (0.0, 0.0);
    for (gt, &q) in scene.ground_truth.iter().zip(&matched) {
        pos += (p[q * 4] - gt.x).hypot(p[q * 4 + 1] - gt.y);
        vel += (p[q * 4 + 2] - gt.vx).hypot(p[q * 4 + 3] - gt.vy);
    }
    let k = matched.len() as f64;
    Ok(TaskErrors { position: pos / k, velocity: vel / k })
}
