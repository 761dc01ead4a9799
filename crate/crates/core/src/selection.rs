//! Two-stage choice of the penalty: a quantile universal threshold (QUT)
//! estimates the rank, then cell-wise K-fold cross-validation picks the
//! amount of shrinkage at that rank.
//!
//! The null statistic is the top singular value of `J Z` for data simulated
//! without interaction, where `Z` is the solver's first working matrix at
//! the no-interaction parameters. Zero interaction is a fixed point of the
//! solver exactly when that value is at most `2 lambda`, hence the factor 1/2
//! in the threshold. The scale of the classical universal threshold is taken
//! as one: the empirical quantile already carries it.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{category_margins, derive_seed, simulate_with_pattern, IndicatorMatrix};
use crate::error::{Error, Result};
use crate::linalg::{row_center, thin_svd, DenseMatrix};
use crate::mmca::{
    build_working_matrix, fit, log_margins, predict_log_proba, softmax_probs, FitConfig, Init, ModelParams,
    DEFAULT_EPSILON, DEFAULT_MAX_ITER,
};

pub const DEFAULT_REPLICATES: usize = 1000;
pub const MIN_REPLICATES: usize = 100;
const MAX_FOLD_RETRIES: usize = 10;

/// Block-centered log of the observed category proportions: the MLE of the
/// model without interaction.
pub fn null_main_effects(g: &IndicatorMatrix) -> Result<nalgebra::DVector<f64>> {
    log_margins(g)
}

/// Runs `job` on a pool of `threads` workers, or on the global pool when `None`.
pub fn with_threads<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(job()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::Config(format!("cannot build a thread pool: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

/// Default level `1 / sqrt(log(max(n, K - J)))`, capped at one.
pub fn default_alpha(n: usize, k_minus_j: usize) -> f64 {
    let m = n.max(k_minus_j) as f64;
    (1.0 / m.ln().sqrt()).min(1.0)
}

/// Linear-interpolation sample quantile (type 7) of sorted data.
pub fn empirical_quantile(sorted: &[f64], prob: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct QutConfig {
    pub replicates: usize,
    pub seed: u64,
    pub alpha_override: Option<f64>,
    pub threads: Option<usize>,
    pub epsilon: f64,
    pub max_iter: usize,
}

impl QutConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            replicates: DEFAULT_REPLICATES,
            seed,
            alpha_override: None,
            threads: None,
            epsilon: DEFAULT_EPSILON,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QutResult {
    pub lambda_qut: f64,
    pub estimated_rank: usize,
    pub alpha_used: f64,
    pub replicates: usize,
    pub seed: u64,
    pub null_singular_values: Vec<f64>,
}

/// Top singular value of `J Z` at zero interaction with main effects `mu`.
pub fn null_statistic(g: &IndicatorMatrix, mu: &nalgebra::DVector<f64>) -> Result<f64> {
    let mut params = ModelParams::zeros(g.n(), g.blocks(), 0)?;
    params.mu = mu.clone();
    let pi = softmax_probs(&DenseMatrix::from_fn(g.n(), g.k(), |_, c| mu[c]), g.blocks());
    let z = build_working_matrix(g, &params, &pi)?;
    let svd = thin_svd(&row_center(&z))?;
    Ok(svd.singular_values.iter().copied().next().unwrap_or(0.0))
}

/// Samples of the null statistic; replicate `r` uses the seed derived from `(seed, r)`.
pub fn null_distribution(g: &IndicatorMatrix, replicates: std::ops::Range<usize>, seed: u64) -> Result<Vec<f64>> {
    let mu = null_main_effects(g)?;
    let zero = DenseMatrix::zeros(g.n(), g.k());
    let mu_slice: Vec<f64> = mu.iter().copied().collect();
    replicates
        .into_par_iter()
        .map(|r| {
            let null = simulate_with_pattern(&mu_slice, &zero, g.blocks(), derive_seed(seed, r as u64), Some(g))?;
            null_statistic(&null, &mu)
        })
        .collect()
}

/// Quantile universal threshold and the rank it selects on `g`.
pub fn qut_lambda(g: &IndicatorMatrix, config: &QutConfig) -> Result<QutResult> {
    if config.replicates < MIN_REPLICATES {
        return Err(Error::Config(format!("at least {MIN_REPLICATES} replicates are required")));
    }
    let blocks = g.blocks();
    let max_rank = blocks.max_rank(g.n());
    let alpha = match config.alpha_override {
        Some(a) if a > 0.0 && a < 1.0 => a,
        Some(a) => return Err(Error::Config(format!("alpha must lie in (0, 1), got {a}"))),
        None => default_alpha(g.n(), blocks.total() - blocks.n_blocks()),
    };
    let (null_values, estimated_rank, lambda) = with_threads(config.threads, || -> Result<_> {
        let null_values = null_distribution(g, 0..config.replicates, config.seed)?;
        let mut sorted = null_values.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let lambda = 0.5 * empirical_quantile(&sorted, 1.0 - alpha);
        let fitted = fit(
            g,
            &FitConfig {
                epsilon: config.epsilon,
                max_iter: config.max_iter,
                ..FitConfig::new(max_rank, lambda)
            },
        )?;
        Ok((null_values, fitted.effective_rank, lambda))
    })??;
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(Error::Numerical("the null statistic is degenerate (threshold is zero)".into()));
    }
    Ok(QutResult {
        lambda_qut: lambda,
        estimated_rank,
        alpha_used: alpha,
        replicates: config.replicates,
        seed: config.seed,
        null_singular_values: null_values,
    })
}

/// Random near-equal partition of `0..n_cells` into `k` folds.
pub fn cv_folds(n_cells: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Fold(format!("need at least two folds, got {k}")));
    }
    if k > n_cells {
        return Err(Error::Fold(format!("{k} folds for only {n_cells} cells")));
    }
    let mut order: Vec<usize> = (0..n_cells).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::with_capacity(n_cells / k + 1); k];
    for (pos, idx) in order.into_iter().enumerate() {
        folds[pos % k].push(idx);
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

/// Evenly spaced (or log-spaced) increasing grid of `count` penalties.
pub fn lambda_grid(min: f64, max: f64, count: usize, log_spaced: bool) -> Result<Vec<f64>> {
    if count == 0 || min.is_nan() || min < 0.0 || max.is_nan() || max < min || !max.is_finite() {
        return Err(Error::Config(format!("invalid grid: min {min}, max {max}, count {count}")));
    }
    if count == 1 {
        return Ok(vec![min]);
    }
    if min == max {
        return Err(Error::Config("a grid of several points needs min < max".into()));
    }
    if log_spaced && min <= 0.0 {
        return Err(Error::Config("a log-spaced grid needs a positive minimum".into()));
    }
    let step = |t: f64| if log_spaced { (min.ln() + t * (max.ln() - min.ln())).exp() } else { min + t * (max - min) };
    let mut grid: Vec<f64> = (0..count).map(|i| step(i as f64 / (count - 1) as f64)).collect();
    grid[0] = min;
    grid[count - 1] = max;
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
    pub threads: Option<usize>,
    pub epsilon: f64,
    pub max_iter: usize,
}

impl CvConfig {
    pub fn new(folds: usize, seed: u64) -> Self {
        Self {
            folds,
            seed,
            threads: None,
            epsilon: DEFAULT_EPSILON,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub rank: usize,
    pub lambda_grid: Vec<f64>,
    /// Held-out deviance per held-out cell, averaged over all folds.
    pub mean_heldout_deviance: Vec<f64>,
    /// Summed held-out deviance, one row per fold.
    pub fold_deviance: Vec<Vec<f64>>,
    pub folds: usize,
    /// Seed of the fold assignment actually used (after any resampling).
    pub fold_seed: u64,
    pub lambda_star: f64,
}

impl CvResult {
    /// Whether some interior grid point beats both endpoints.
    pub fn has_interior_minimum(&self) -> bool {
        let curve = &self.mean_heldout_deviance;
        if curve.len() < 3 {
            return false;
        }
        let ends = curve[0].min(curve[curve.len() - 1]);
        curve[1..curve.len() - 1].iter().any(|&v| v < ends)
    }
}

fn fold_keeps_categories(g: &IndicatorMatrix, held_out: &[(usize, usize)]) -> bool {
    let mut counts = category_margins(g);
    for &(i, j) in held_out {
        if let Some(k) = g.category(i, j) {
            counts[g.blocks().offsets()[j] + k] -= 1.0;
        }
    }
    counts.iter().all(|&c| c > 0.0)
}

/// `-sum log pi` of the held-out cells under `params`.
pub fn heldout_deviance(g: &IndicatorMatrix, params: &ModelParams, held_out: &[(usize, usize)]) -> Result<f64> {
    let logs = predict_log_proba(params, held_out)?;
    let mut total = 0.0;
    for (&(i, j), lp) in held_out.iter().zip(&logs) {
        if let Some(k) = g.category(i, j) {
            total -= lp[k];
        }
    }
    Ok(total)
}

/// Cell-wise K-fold cross-validation of the penalty at a fixed rank.
///
/// Each fold walks the grid from the largest penalty down, warm-starting
/// every fit from the previous solution.
pub fn cross_validate(g: &IndicatorMatrix, rank: usize, grid: &[f64], config: &CvConfig) -> Result<CvResult> {
    if grid.is_empty() {
        return Err(Error::Config("empty lambda grid".into()));
    }
    if grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("lambda grid must be finite, nonnegative and strictly increasing".into()));
    }
    let max = g.blocks().max_rank(g.n());
    if rank > max {
        return Err(Error::Rank { requested: rank, max });
    }
    let cells = g.observed_cells();

    let mut chosen = None;
    for attempt in 0..=MAX_FOLD_RETRIES {
        let seed = if attempt == 0 { config.seed } else { derive_seed(config.seed, attempt as u64) };
        let folds: Vec<Vec<(usize, usize)>> = cv_folds(cells.len(), config.folds, seed)?
            .into_iter()
            .map(|f| f.into_iter().map(|idx| cells[idx]).collect())
            .collect();
        if folds.iter().all(|f| fold_keeps_categories(g, f)) {
            chosen = Some((seed, folds));
            break;
        }
        log::warn!("fold assignment with seed {seed} empties a category; resampling");
    }
    let (fold_seed, folds) = chosen.ok_or_else(|| {
        Error::Fold(format!("every fold assignment in {} attempts empties a category", MAX_FOLD_RETRIES + 1))
    })?;

    let fold_deviance = with_threads(config.threads, || {
        folds
            .par_iter()
            .map(|held_out| -> Result<Vec<f64>> {
                let train = g.with_cells_masked(held_out);
                let mut scores = vec![0.0; grid.len()];
                let mut warm: Option<ModelParams> = None;
                for (idx, &lambda) in grid.iter().enumerate().rev() {
                    let init = warm.take().map_or(Init::Margins, Init::Params);
                    let result = fit(
                        &train,
                        &FitConfig { epsilon: config.epsilon, max_iter: config.max_iter, init, ..FitConfig::new(rank, lambda) },
                    )?;
                    scores[idx] = heldout_deviance(g, &result.params, held_out)?;
                    warm = Some(result.params);
                }
                Ok(scores)
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let total_cells: usize = folds.iter().map(Vec::len).sum();
    let mean_heldout_deviance: Vec<f64> = (0..grid.len())
        .map(|idx| fold_deviance.iter().map(|f| f[idx]).sum::<f64>() / total_cells as f64)
        .collect();
    if mean_heldout_deviance.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite held-out deviance".into()));
    }
    let mut best = 0;
    for (idx, &v) in mean_heldout_deviance.iter().enumerate() {
        if v < mean_heldout_deviance[best] {
            best = idx;
        }
    }
    Ok(CvResult {
        rank,
        lambda_grid: grid.to_vec(),
        mean_heldout_deviance,
        fold_deviance,
        folds: config.folds,
        fold_seed,
        lambda_star: grid[best],
    })
}
