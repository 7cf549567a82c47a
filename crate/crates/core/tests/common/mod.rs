#![allow(dead_code)]

use tempdistill_core::autodiff::{Graph, RandomSource, Tensor, Var};
use tempdistill_oracle::{finite_diff_grad, Array, GradCheckReport, DEFAULT_STEP, DEFAULT_TOLERANCE};

pub fn rand_tensor(shape: &[usize], rng: &mut RandomSource) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Random values with magnitude in `[0.1, 1)`, away from ReLU/abs kinks.
pub fn rand_away_from_zero(shape: &[usize], rng: &mut RandomSource) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.range(0.1, 1.0);
        if rng.uniform() < 0.5 {
            -m
        } else {
            m
        }
    })
}

pub fn arr(t: &Tensor) -> Array {
    Array::new(t.shape().to_vec(), t.data().to_vec())
}

/// Compares `backward` against central differences for every input of a
/// scalar function built by `build`.
pub fn gradcheck(name: &str, inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Var) -> GradCheckReport {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars);
    let grads = g.backward(loss).unwrap();
    let mut report: Option<GradCheckReport> = None;
    for (i, input) in inputs.iter().enumerate() {
        let numeric = finite_diff_grad(
            |x| {
                let mut g = Graph::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        if j == i {
                            g.param(Tensor::new(t.shape().to_vec(), x.to_vec()).unwrap())
                        } else {
                            g.param(t.clone())
                        }
                    })
                    .collect();
                let l = build(&mut g, &vars);
                g.value(l).item()
            },
            input.data(),
            DEFAULT_STEP,
        );
        let r = GradCheckReport::compare(name, grads.wrt(vars[i]).data(), &numeric, DEFAULT_TOLERANCE);
        match &mut report {
            Some(acc) => acc.merge(&r),
            None => report = Some(r),
        }
    }
    report.unwrap()
}

/// Projects a tensor-valued node onto a fixed random direction so every
/// output entry contributes to the scalar.
pub fn project(g: &mut Graph, v: Var, seed: u64) -> Var {
    let mut rng = RandomSource::new(seed);
    let w = Tensor::uniform(g.value(v).shape(), -1.0, 1.0, &mut rng);
    let w = g.constant(w);
    let p = g.mul(v, w).unwrap();
    g.reduce_mean(p)
}
