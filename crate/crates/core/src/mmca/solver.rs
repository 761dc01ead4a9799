//! The majorization algorithm for the penalized multinomial deviance.
//!
//! Every cycle replaces the deviance by the quadratic `(1/4)|Z - Theta|^2`
//! (curvature bound 1/2 on each cell's Hessian, plus the extra bound that
//! turns missing cells into a plain least-squares fit), then minimizes it in
//! closed form: column means for `mu`, the SVD of the doubly centered working
//! matrix for `U` and `V`, and soft-thresholding for `d`.

use nalgebra::DVector;

use super::model::{deviance, linear_predictor, softmax_probs, ModelParams, ProbabilityMatrix};
use crate::dataset::{category_margins, IndicatorMatrix};
use crate::error::{Error, Result};
use crate::linalg::{
    block_center, block_indicator_basis, constrained_orthonormal, ones_basis, row_center, thin_svd, DenseMatrix,
};

pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 5000;

/// How the solver picks its starting point.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Init {
    /// Block-centered column means for `mu`, thresholded SVD of `J G J_c` for the interaction.
    #[default]
    Margins,
    /// Block-centered log category proportions (the no-interaction MLE) and a zero interaction.
    LogMargins,
    /// Start from the given parameters (warm start). Extra or missing columns are adjusted to the rank.
    Params(ModelParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub rank: usize,
    pub lambda: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    pub init: Init,
}

impl FitConfig {
    pub fn new(rank: usize, lambda: f64) -> Self {
        Self {
            rank,
            lambda,
            epsilon: DEFAULT_EPSILON,
            max_iter: DEFAULT_MAX_ITER,
            init: Init::Margins,
        }
    }

    fn validate(&self, g: &IndicatorMatrix) -> Result<()> {
        let max = g.blocks().max_rank(g.n());
        if self.rank > max {
            return Err(Error::Rank { requested: self.rank, max });
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and nonnegative, got {}", self.lambda)));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: ModelParams,
    /// Penalized deviance at the start point followed by one entry per cycle.
    pub deviance_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub effective_rank: usize,
    pub lambda: f64,
}

impl FitResult {
    pub fn objective(&self) -> f64 {
        *self.deviance_trace.last().expect("trace holds the starting value")
    }
}

pub fn soft_threshold(phi: f64, t: f64) -> f64 {
    (phi - t).max(0.0)
}

/// `Z = [Theta + 2(G - W . Pi)] J_c`.
pub fn build_working_matrix(g: &IndicatorMatrix, params: &ModelParams, pi: &ProbabilityMatrix) -> Result<DenseMatrix> {
    let theta = linear_predictor(params);
    if theta.shape() != g.values().shape() {
        return Err(Error::Shape(format!(
            "parameters describe a {:?} table but the data is {:?}",
            theta.shape(),
            g.values().shape()
        )));
    }
    let residual = g.values() - g.mask().component_mul(&pi.values);
    block_center(&(theta + residual * 2.0), g.blocks())
}

/// Minimizes the majorizer anchored at the current working matrix.
fn update_from_working(z: &DenseMatrix, rank: usize, lambda: f64, blocks: &crate::linalg::BlockStructure) -> Result<ModelParams> {
    let n = z.nrows();
    let mu = z.row_mean().transpose();
    let svd = thin_svd(&row_center(z))?.truncate(rank);
    let keep = svd.rank();
    let u = constrained_orthonormal(&svd.left, keep, &ones_basis(n), rank);
    let v = constrained_orthonormal(&svd.right, keep, &block_indicator_basis(blocks), rank);
    let threshold = 2.0 * lambda;
    let d = DVector::from_fn(rank, |s, _| if s < keep { soft_threshold(svd.singular_values[s], threshold) } else { 0.0 });
    ModelParams::new(mu, u, d, v, blocks.clone())
}

/// One full majorization cycle from `params`.
pub fn mm_step(g: &IndicatorMatrix, params: &ModelParams, lambda: f64) -> Result<ModelParams> {
    let pi = softmax_probs(&linear_predictor(params), g.blocks());
    let z = build_working_matrix(g, params, &pi)?;
    update_from_working(&z, params.rank(), lambda, g.blocks())
}

/// Block-centered log of observed category proportions.
pub fn log_margins(g: &IndicatorMatrix) -> Result<DVector<f64>> {
    let counts = category_margins(g);
    let mut mu = DVector::zeros(g.k());
    for range in g.blocks().ranges() {
        let total: f64 = range.clone().map(|c| counts[c]).sum();
        if let Some(c) = range.clone().find(|&c| counts[c] <= 0.0) {
            return Err(Error::DegenerateCategory { column: c });
        }
        let logs: Vec<f64> = range.clone().map(|c| (counts[c] / total).ln()).collect();
        let mean = logs.iter().sum::<f64>() / logs.len() as f64;
        for (c, l) in range.zip(logs) {
            mu[c] = l - mean;
        }
    }
    Ok(mu)
}

fn initial_params(g: &IndicatorMatrix, config: &FitConfig) -> Result<ModelParams> {
    let rank = config.rank;
    let blocks = g.blocks();
    let n = g.n();
    match &config.init {
        Init::Params(p) => {
            if p.blocks != *blocks || p.n() != n {
                return Err(Error::Shape("warm-start parameters do not match the data".into()));
            }
            let keep = p.rank().min(rank);
            let u = constrained_orthonormal(&p.u, keep, &ones_basis(n), rank);
            let v = constrained_orthonormal(&p.v, keep, &block_indicator_basis(blocks), rank);
            let d = DVector::from_fn(rank, |s, _| if s < keep { p.d[s] } else { 0.0 });
            ModelParams::new(p.mu.clone(), u, d, v, blocks.clone())
        }
        Init::Margins | Init::LogMargins => {
            let centered = block_center(g.values(), blocks)?;
            let mut start = update_from_working(&centered, rank, config.lambda, blocks)?;
            if config.init == Init::LogMargins {
                start.mu = log_margins(g)?;
                start.d.fill(0.0);
            }
            Ok(start)
        }
    }
}

/// Runs the majorization algorithm until the relative decrease of the
/// penalized deviance drops below `epsilon` or `max_iter` cycles are spent.
pub fn fit(g: &IndicatorMatrix, config: &FitConfig) -> Result<FitResult> {
    config.validate(g)?;
    let lambda = config.lambda;
    let mut params = initial_params(g, config)?;
    let mut pi = softmax_probs(&linear_predictor(&params), g.blocks());
    let mut current = deviance(g, &pi) + lambda * params.d.sum();
    if !current.is_finite() {
        return Err(Error::Numerical("non-finite deviance at the starting point".into()));
    }
    let mut trace = vec![current];
    let mut converged = current == 0.0;
    let mut iterations = 0;

    while !converged && iterations < config.max_iter {
        iterations += 1;
        let z = build_working_matrix(g, &params, &pi)?;
        params = update_from_working(&z, config.rank, lambda, g.blocks())?;
        debug_assert!(
            params.constraint_violation() < 1e-8,
            "identification constraints drifted by {}",
            params.constraint_violation()
        );
        pi = softmax_probs(&linear_predictor(&params), g.blocks());
        let next = deviance(g, &pi) + lambda * params.d.sum();
        if !next.is_finite() {
            return Err(Error::Numerical(format!("non-finite deviance at iteration {iterations}")));
        }
        trace.push(next);
        if next == 0.0 || (current - next) / next < config.epsilon {
            converged = true;
        }
        current = next;
    }

    let effective_rank = params.effective_rank();
    Ok(FitResult {
        params,
        deviance_trace: trace,
        converged,
        iterations,
        effective_rank,
        lambda,
    })
}
