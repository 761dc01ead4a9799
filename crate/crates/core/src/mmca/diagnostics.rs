//! Predictions, biplot coordinates and the category-centroid bias measure.

use serde::{Deserialize, Serialize};

use super::model::{log_sum_exp, ModelParams, ProbabilityMatrix};
use crate::dataset::{category_margins, IndicatorMatrix};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Log-probabilities of every category for each requested `(row, variable)` cell.
pub fn predict_log_proba(params: &ModelParams, cells: &[(usize, usize)]) -> Result<Vec<Vec<f64>>> {
    let n = params.n();
    let n_vars = params.blocks.n_blocks();
    cells
        .iter()
        .map(|&(i, j)| {
            if i >= n || j >= n_vars {
                return Err(Error::Shape(format!("cell ({i}, {j}) outside a {n} x {n_vars} table")));
            }
            let block: Vec<f64> = params
                .blocks
                .range(j)
                .map(|c| {
                    let mut t = params.mu[c];
                    for s in 0..params.rank() {
                        t += params.u[(i, s)] * params.d[s] * params.v[(c, s)];
                    }
                    t
                })
                .collect();
            let lse = log_sum_exp(&block);
            Ok(block.into_iter().map(|t| t - lse).collect())
        })
        .collect()
}

/// Softmax of `theta_ij` for each requested `(row, variable)` cell.
pub fn predict_proba(params: &ModelParams, cells: &[(usize, usize)]) -> Result<Vec<Vec<f64>>> {
    let logs = predict_log_proba(params, cells)?;
    Ok(logs.into_iter().map(|b| b.into_iter().map(f64::exp).collect()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiplotScaling {
    /// `X = sqrt(n) U`, `A = V D / sqrt(n)`, so that `X A' = U D V'`.
    #[default]
    Interaction,
    /// `X = sqrt(n) U D^(1/4)`, `A = V D^(1/4) / sqrt(n)`.
    Symmetric,
}

impl std::str::FromStr for BiplotScaling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interaction" => Ok(Self::Interaction),
            "symmetric" => Ok(Self::Symmetric),
            other => Err(Error::Config(format!("unknown biplot scaling `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiplotCoords {
    pub rows: DenseMatrix,
    pub categories: DenseMatrix,
    pub scaling: BiplotScaling,
}

pub fn biplot_coords(params: &ModelParams, scaling: BiplotScaling) -> BiplotCoords {
    let root_n = (params.n() as f64).sqrt();
    let mut rows = &params.u * root_n;
    let mut categories = &params.v / root_n;
    for s in 0..params.rank() {
        let d = params.d[s];
        match scaling {
            BiplotScaling::Interaction => {
                categories.column_mut(s).scale_mut(d);
            }
            BiplotScaling::Symmetric => {
                let q = d.powf(0.25);
                rows.column_mut(s).scale_mut(q);
                categories.column_mut(s).scale_mut(q);
            }
        }
    }
    BiplotCoords { rows, categories, scaling }
}

/// `B = Diag(1'G)^-1 (G - W . Pi)' X`: weighted minus unweighted category centroids.
pub fn centroid_bias(g: &IndicatorMatrix, pi: &ProbabilityMatrix, x: &DenseMatrix) -> Result<DenseMatrix> {
    if x.nrows() != g.n() || pi.values.shape() != g.values().shape() {
        return Err(Error::Shape("centroid bias inputs disagree on the number of rows".into()));
    }
    let counts = category_margins(g);
    if let Some(c) = counts.iter().position(|&x| x <= 0.0) {
        return Err(Error::DegenerateCategory { column: c });
    }
    let residual = g.values() - g.mask().component_mul(&pi.values);
    let mut b = residual.transpose() * x;
    for (c, mut row) in b.row_iter_mut().enumerate() {
        row /= counts[c];
    }
    Ok(b)
}
