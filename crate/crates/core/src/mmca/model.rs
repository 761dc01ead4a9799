//! Parameter set, linear predictor, blockwise softmax and the (penalized)
//! multinomial deviance.

use nalgebra::DVector;

use crate::dataset::IndicatorMatrix;
use crate::error::{Error, Result};
use crate::linalg::{block_indicator_basis, constrained_orthonormal, ones_basis, BlockStructure, DenseMatrix};

/// Main effects plus the rank-p interaction `U diag(d) V'`.
///
/// Identification: each block of `mu` sums to zero, `U` has orthonormal
/// centered columns, `V` has orthonormal columns that sum to zero within every
/// block, and `d` is nonnegative and nonincreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub mu: DVector<f64>,
    pub u: DenseMatrix,
    pub d: DVector<f64>,
    pub v: DenseMatrix,
    pub blocks: BlockStructure,
}

impl ModelParams {
    pub fn new(mu: DVector<f64>, u: DenseMatrix, d: DVector<f64>, v: DenseMatrix, blocks: BlockStructure) -> Result<Self> {
        let k = blocks.total();
        let p = d.len();
        if mu.len() != k || v.nrows() != k || u.ncols() != p || v.ncols() != p {
            return Err(Error::Shape(format!(
                "inconsistent parameter shapes: mu {}, U {}x{}, d {}, V {}x{}, K = {k}",
                mu.len(),
                u.nrows(),
                u.ncols(),
                p,
                v.nrows(),
                v.ncols()
            )));
        }
        Ok(Self { mu, u, d, v, blocks })
    }

    /// Zero main effects and zero interaction, with admissible `U`, `V` bases.
    pub fn zeros(n: usize, blocks: &BlockStructure, p: usize) -> Result<Self> {
        let max = blocks.max_rank(n);
        if p > max {
            return Err(Error::Rank { requested: p, max });
        }
        let k = blocks.total();
        let u = constrained_orthonormal(&DenseMatrix::zeros(n, 0), 0, &ones_basis(n), p);
        let v = constrained_orthonormal(&DenseMatrix::zeros(k, 0), 0, &block_indicator_basis(blocks), p);
        Ok(Self {
            mu: DVector::zeros(k),
            u,
            d: DVector::zeros(p),
            v,
            blocks: blocks.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn rank(&self) -> usize {
        self.d.len()
    }

    pub fn effective_rank(&self) -> usize {
        self.d.iter().filter(|&&x| x > 0.0).count()
    }

    /// `U diag(d) V'`.
    pub fn interaction(&self) -> DenseMatrix {
        let mut ud = self.u.clone();
        for (s, mut col) in ud.column_iter_mut().enumerate() {
            col *= self.d[s];
        }
        ud * self.v.transpose()
    }

    /// Largest absolute violation over all identification constraints.
    pub fn constraint_violation(&self) -> f64 {
        let mut worst = 0.0_f64;
        for range in self.blocks.ranges() {
            worst = worst.max(range.clone().map(|c| self.mu[c]).sum::<f64>().abs());
            for col in self.v.column_iter() {
                worst = worst.max(range.clone().map(|c| col[c]).sum::<f64>().abs());
            }
        }
        for col in self.u.column_iter() {
            worst = worst.max(col.sum().abs());
        }
        let p = self.rank();
        let eye = DenseMatrix::identity(p, p);
        worst = worst.max((self.u.transpose() * &self.u - &eye).amax());
        worst = worst.max((self.v.transpose() * &self.v - &eye).amax());
        for s in 0..p {
            if self.d[s] < 0.0 {
                worst = worst.max(-self.d[s]);
            }
            if s + 1 < p && self.d[s + 1] > self.d[s] {
                worst = worst.max(self.d[s + 1] - self.d[s]);
            }
        }
        worst
    }
}

/// `Theta = 1 mu' + U D V'`.
pub fn linear_predictor(params: &ModelParams) -> DenseMatrix {
    let mut theta = params.interaction();
    for mut row in theta.row_iter_mut() {
        row += params.mu.transpose();
    }
    theta
}

/// Below this argument `exp` leaves the normal range; such terms are flushed
/// to zero, which keeps subnormal arithmetic out of the inner loops.
const MIN_EXP_ARG: f64 = -708.0;

fn exp_or_zero(x: f64) -> f64 {
    if x < MIN_EXP_ARG {
        0.0
    } else {
        x.exp()
    }
}

/// Numerically stable softmax over one block, overwriting the utilities.
pub fn softmax_in_place(block: &mut [f64]) {
    let max = block.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in block.iter_mut() {
        *x = exp_or_zero(*x - max);
        total += *x;
    }
    for x in block.iter_mut() {
        *x /= total;
    }
}

/// `log sum exp` of a block.
pub fn log_sum_exp(block: &[f64]) -> f64 {
    let max = block.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + block.iter().map(|x| exp_or_zero(x - max)).sum::<f64>().ln()
}

/// Fitted probabilities `pi_ijk`; every row block sums to one.
///
/// Log-probabilities are kept alongside so the deviance stays finite when a
/// probability underflows.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    pub values: DenseMatrix,
    pub log_values: DenseMatrix,
}

pub fn softmax_probs(theta: &DenseMatrix, blocks: &BlockStructure) -> ProbabilityMatrix {
    let mut values = theta.clone();
    let mut log_values = theta.clone();
    for i in 0..theta.nrows() {
        for range in blocks.ranges() {
            let max = range.clone().map(|c| theta[(i, c)]).fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = range.clone().map(|c| exp_or_zero(theta[(i, c)] - max)).sum();
            let lse = max + total.ln();
            for c in range {
                let lp = theta[(i, c)] - lse;
                log_values[(i, c)] = lp;
                values[(i, c)] = exp_or_zero(lp);
            }
        }
    }
    ProbabilityMatrix { values, log_values }
}

/// `-sum g log pi`; masked cells carry `g = 0` and contribute nothing.
pub fn deviance(g: &IndicatorMatrix, pi: &ProbabilityMatrix) -> f64 {
    g.values()
        .iter()
        .zip(pi.log_values.iter())
        .filter(|(&gv, _)| gv > 0.0)
        .map(|(&gv, &lp)| -gv * lp)
        .sum()
}

/// Deviance plus `lambda * sum(d)`.
pub fn penalized_deviance(g: &IndicatorMatrix, params: &ModelParams, lambda: f64) -> f64 {
    let pi = softmax_probs(&linear_predictor(params), &params.blocks);
    deviance(g, &pi) + lambda * params.d.sum()
}
