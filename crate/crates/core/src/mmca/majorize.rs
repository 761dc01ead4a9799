//! Per-cell deviance term, its gradient and Hessian, and the quadratic
//! majorizer with curvature 1/2 that drives the solver.

use nalgebra::DMatrix;

use super::model::log_sum_exp;

/// `f_ij(theta) = -sum_k g_k log softmax(theta)_k`.
pub fn block_deviance(theta: &[f64], g: &[f64]) -> f64 {
    let lse = log_sum_exp(theta);
    theta
        .iter()
        .zip(g)
        .filter(|(_, &gk)| gk > 0.0)
        .map(|(t, gk)| -gk * (t - lse))
        .sum()
}

/// Gradient of the deviance term: `pi - g`.
pub fn deviance_gradient_block(g: &[f64], pi: &[f64]) -> Vec<f64> {
    pi.iter().zip(g).map(|(p, gk)| p - gk).collect()
}

/// `f(theta0) + (theta - theta0)' grad f(theta0) + |theta - theta0|^2 / 4`.
pub fn majorizer_value(theta: &[f64], theta0: &[f64], g: &[f64], pi0: &[f64]) -> f64 {
    let grad = deviance_gradient_block(g, pi0);
    let mut linear = 0.0;
    let mut quad = 0.0;
    for ((t, t0), gr) in theta.iter().zip(theta0).zip(&grad) {
        let delta = t - t0;
        linear += delta * gr;
        quad += delta * delta;
    }
    block_deviance(theta0, g) + linear + 0.25 * quad
}

/// `Diag(pi) - pi pi'`.
pub fn hessian_block(pi: &[f64]) -> DMatrix<f64> {
    let k = pi.len();
    DMatrix::from_fn(k, k, |a, b| if a == b { pi[a] - pi[a] * pi[a] } else { -pi[a] * pi[b] })
}
