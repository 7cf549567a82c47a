pub const DEFAULT_STEP: f64 = 1e-5;

/// Central-difference gradient of `f` at `x`, one coordinate at a time.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = f(&probe);
        probe[i] = orig - step;
        let minus = f(&probe);
        probe[i] = orig;
        grad.push((plus - minus) / (2.0 * step));
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_of_mean() {
        let x = [0.3, -1.2, 4.0, 2.5];
        let g = finite_diff_grad(|v| v.iter().sum::<f64>() / v.len() as f64, &x, DEFAULT_STEP);
        for v in g {
            assert!((v - 0.25).abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_of_sum_of_squares() {
        let g = finite_diff_grad(|v| v.iter().map(|a| a * a).sum(), &[1.0, 2.0], DEFAULT_STEP);
        assert!((g[0] - 2.0).abs() < 1e-8);
        assert!((g[1] - 4.0).abs() < 1e-8);
    }
}
