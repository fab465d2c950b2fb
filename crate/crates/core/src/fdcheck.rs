//! Central finite-difference oracles.
//!
//! These deliberately avoid the analytic gradient paths they are used to
//! check: [`central_diff`] only evaluates a black-box function, and
//! [`meta_epsilon_fd`] re-runs the lookahead-then-development-loss pipeline
//! for each perturbed conditional weight instead of using the closed form.

use alloc::vec::Vec;

use crate::data::Batch;
use crate::error::Result;
use crate::param::ParamVector;
use crate::weighting::Objective;

/// Central finite differences of a scalar function, one coordinate at a time.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut point = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = point[i];
        point[i] = orig + h;
        let plus = f(&point);
        point[i] = orig - h;
        let minus = f(&point);
        point[i] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    out
}

/// `|a - b| / max(|a|, |b|, 1)`: relative error with an absolute floor so
/// near-zero gradients compare sanely.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Worst [`relative_error`] across two gradient vectors.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &b)| relative_error(a, b))
        .fold(0.0, f64::max)
}

/// Finite-difference estimate of the conditional-weight meta-gradient.
///
/// For each ε_i, perturbs the lookahead weight by ±h, rebuilds
/// `θ̃ = θ - (η/|B|) Σ w_j g_j` from scratch, evaluates the unweighted mean
/// development loss at θ̃ forward-only, and takes the central difference.
pub fn meta_epsilon_fd(
    objective: &impl Objective,
    theta: &ParamVector,
    train_batch: &Batch,
    dev_batch: &Batch,
    lookahead_weights: &[f64],
    eta: f64,
    h: f64,
) -> Result<Vec<f64>> {
    let grads = objective.per_example_grads(theta, train_batch)?;
    let b = grads.len() as f64;
    let dev_loss_at = |weights: &[f64]| -> Result<f64> {
        let mut tilde = theta.clone();
        for (g, &w) in grads.iter().zip(weights) {
            tilde.axpy(-(eta / b) * w, g);
        }
        objective.mean_loss(&tilde, dev_batch)
    };

    let mut weights = lookahead_weights.to_vec();
    let mut out = Vec::with_capacity(weights.len());
    for i in 0..weights.len() {
        let orig = weights[i];
        weights[i] = orig + h;
        let plus = dev_loss_at(&weights)?;
        weights[i] = orig - h;
        let minus = dev_loss_at(&weights)?;
        weights[i] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_diff_of_quadratic() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let grad = central_diff(f, &[1.0, -2.0, 0.5], 1e-6);
        let expect = [2.0, -4.0, 1.0];
        assert!(max_relative_error(&grad, &expect) < 1e-9);
    }

    #[test]
    fn relative_error_floors_at_one() {
        assert!(relative_error(0.0, 1e-9) < 1e-8);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-12);
    }
}
