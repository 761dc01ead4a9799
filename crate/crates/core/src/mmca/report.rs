//! JSON form of a fit, consumed by the `biplot` subcommand.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::model::ModelParams;
use super::solver::FitResult;
use crate::dataset::Variable;
use crate::error::{Error, Result};
use crate::linalg::{BlockStructure, DenseMatrix};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableLabels {
    pub name: String,
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub format_version: u32,
    pub rank: usize,
    pub lambda: f64,
    pub mu: Vec<f64>,
    pub d: Vec<f64>,
    #[serde(rename = "U")]
    pub u: Vec<Vec<f64>>,
    #[serde(rename = "V")]
    pub v: Vec<Vec<f64>>,
    pub trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub effective_rank: usize,
    pub block_sizes: Vec<usize>,
    pub variables: Vec<VariableLabels>,
}

fn rows_of(m: &DenseMatrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], cols: usize, what: &str) -> Result<DenseMatrix> {
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Shape(format!("every row of {what} needs {cols} entries")));
    }
    Ok(DenseMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

impl FitReport {
    pub fn new(fit: &FitResult, variables: &[Variable]) -> Self {
        let p = &fit.params;
        Self {
            format_version: FORMAT_VERSION,
            rank: p.rank(),
            lambda: fit.lambda,
            mu: p.mu.iter().copied().collect(),
            d: p.d.iter().copied().collect(),
            u: rows_of(&p.u),
            v: rows_of(&p.v),
            trace: fit.deviance_trace.clone(),
            converged: fit.converged,
            iterations: fit.iterations,
            effective_rank: fit.effective_rank,
            block_sizes: p.blocks.sizes().to_vec(),
            variables: variables
                .iter()
                .map(|v| VariableLabels { name: v.name.clone(), categories: v.categories.clone() })
                .collect(),
        }
    }

    pub fn params(&self) -> Result<ModelParams> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Parse(format!("unsupported format_version {}", self.format_version)));
        }
        let blocks = BlockStructure::new(self.block_sizes.clone())?;
        let p = self.d.len();
        ModelParams::new(
            DVector::from_vec(self.mu.clone()),
            matrix_from_rows(&self.u, p, "U")?,
            DVector::from_vec(self.d.clone()),
            matrix_from_rows(&self.v, p, "V")?,
            blocks,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(report)
    }
}
