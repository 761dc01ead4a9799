//! Classical multiple correspondence analysis via the generalized SVD of
//! the triplet `(J G, J^-1 D_c^-1/2, n^-1 I)`.
//!
//! Fitted values `g_hat = mu + X A'` sum to one within every variable block
//! (so the grand row sum is the number of variables), but individual entries
//! can be negative.

use nalgebra::DVector;

use crate::dataset::{category_margins, IndicatorMatrix};
use crate::error::{Error, Result};
use crate::linalg::{row_center, weighted_gsvd, DenseMatrix};

#[derive(Debug, Clone)]
pub struct McaResult {
    /// Row vectors with `U' (I/n) U = I`, truncated to the requested rank.
    pub u_tilde: DenseMatrix,
    /// All generalized singular values, nonincreasing.
    pub singular_values: DVector<f64>,
    /// Category vectors with `V' (D_c^-1/2 / J) V = I`, truncated.
    pub v_tilde: DenseMatrix,
    pub x: DenseMatrix,
    pub a: DenseMatrix,
    /// Column means of `G`.
    pub mu: DVector<f64>,
    pub row_weights: Vec<f64>,
    pub col_weights: Vec<f64>,
}

impl McaResult {
    pub fn rank(&self) -> usize {
        self.x.ncols()
    }
}

pub fn fit_mca(g: &IndicatorMatrix, p: usize) -> Result<McaResult> {
    if !g.is_fully_observed() {
        return Err(Error::Config("MCA needs a fully observed table; use the MMCA fit for missing cells".into()));
    }
    let counts = category_margins(g);
    if let Some(c) = counts.iter().position(|&x| x <= 0.0) {
        return Err(Error::DegenerateCategory { column: c });
    }
    let n = g.n();
    let max = g.blocks().max_rank(n);
    if p > max {
        return Err(Error::Rank { requested: p, max });
    }
    let n_vars = g.n_vars() as f64;
    let row_weights = vec![1.0 / n as f64; n];
    let col_weights: Vec<f64> = counts.iter().map(|&c| 1.0 / (n_vars * c.sqrt())).collect();

    let gsvd = weighted_gsvd(&row_center(g.values()), &row_weights, &col_weights)?;
    let kept = gsvd.truncate(p);
    let roots = kept.singular_values.map(f64::sqrt);
    let mut x = kept.left.clone();
    let mut a = kept.right.clone();
    for s in 0..p {
        x.column_mut(s).scale_mut(roots[s]);
        a.column_mut(s).scale_mut(roots[s]);
    }
    Ok(McaResult {
        u_tilde: kept.left,
        singular_values: gsvd.singular_values,
        v_tilde: kept.right,
        x,
        a,
        mu: g.values().row_mean().transpose(),
        row_weights,
        col_weights,
    })
}

/// `g_hat_ijk = mu_jk + x_i' a_jk`.
pub fn reconstruct(result: &McaResult) -> DenseMatrix {
    let mut g_hat = &result.x * result.a.transpose();
    for mut row in g_hat.row_iter_mut() {
        row += result.mu.transpose();
    }
    g_hat
}

/// Weighted loss `tr(T D_c^-1/2 T' / n)` of the residual `T = J G - X A'`.
pub fn mca_loss(g: &IndicatorMatrix, result: &McaResult) -> f64 {
    let residual = row_center(g.values()) - &result.x * result.a.transpose();
    let n_vars = g.n_vars() as f64;
    let n = g.n() as f64;
    residual
        .column_iter()
        .zip(&result.col_weights)
        .map(|(col, w)| col.norm_squared() * w * n_vars / n)
        .sum()
}

/// Largest deviation from one of the per-block row sums of `g_hat`, and the
/// largest deviation of the grand row sum from the number of variables.
pub fn row_sum_check(g: &IndicatorMatrix, g_hat: &DenseMatrix) -> (f64, f64) {
    let mut block_dev = 0.0_f64;
    let mut grand_dev = 0.0_f64;
    let n_vars = g.n_vars() as f64;
    for row in g_hat.row_iter() {
        for range in g.blocks().ranges() {
            let s: f64 = range.map(|c| row[c]).sum();
            block_dev = block_dev.max((s - 1.0).abs());
        }
        grand_dev = grand_dev.max((row.sum() - n_vars).abs());
    }
    (block_dev, grand_dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::fixtures::example_indicator;
    use crate::linalg::BlockStructure;

    #[test]
    fn example_fit_is_well_formed() {
        let g = example_indicator();
        let res = fit_mca(&g, 2).unwrap();
        let sv = res.singular_values.as_slice();
        assert!(sv.windows(2).all(|w| w[0] >= w[1]));
        let n = g.n() as f64;
        let uu = res.u_tilde.transpose() * &res.u_tilde / n;
        assert!((uu - DenseMatrix::identity(2, 2)).amax() < 1e-8);
        let cw = DenseMatrix::from_diagonal(&DVector::from_vec(res.col_weights.clone()));
        let vv = res.v_tilde.transpose() * cw * &res.v_tilde;
        assert!((vv - DenseMatrix::identity(2, 2)).amax() < 1e-8);
        assert!(res.x.row_sum().amax() < 1e-10);
    }

    #[test]
    fn loss_is_nonincreasing_in_rank() {
        let g = example_indicator();
        let losses: Vec<f64> = (0..=5).map(|p| mca_loss(&g, &fit_mca(&g, p).unwrap())).collect();
        assert!(losses.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{losses:?}");
        assert!(losses[5] < 1e-16);
    }

    #[test]
    fn full_rank_reconstructs_the_table() {
        let g = example_indicator();
        let res = fit_mca(&g, 5).unwrap();
        assert!((reconstruct(&res) - g.values()).amax() < 1e-8);
        let jg = row_center(g.values());
        assert!((&res.x * res.a.transpose() - jg).amax() < 1e-8);
    }

    #[test]
    fn rank_zero_gives_category_proportions() {
        let g = example_indicator();
        let g_hat = reconstruct(&fit_mca(&g, 0).unwrap());
        let props = [0.6, 0.2, 0.2, 0.8, 0.1, 0.1, 0.2, 0.8];
        for i in 0..10 {
            for (c, p) in props.iter().enumerate() {
                assert!((g_hat[(i, c)] - p).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn block_row_sums_are_one_and_grand_sum_is_j() {
        let g = example_indicator();
        for p in 0..=5 {
            let g_hat = reconstruct(&fit_mca(&g, p).unwrap());
            let (block, grand) = row_sum_check(&g, &g_hat);
            assert!(block < 1e-8 && grand < 1e-8, "p = {p}: {block} {grand}");
        }
    }

    #[test]
    fn low_rank_fit_has_negative_values() {
        let g = example_indicator();
        let g_hat = reconstruct(&fit_mca(&g, 1).unwrap());
        assert!(g_hat.min() < 0.0);
    }

    #[test]
    fn rejects_missing_cells_and_bad_rank() {
        let g = example_indicator();
        assert!(matches!(fit_mca(&g, 6), Err(Error::Rank { requested: 6, max: 5 })));
        let masked = g.with_cells_masked(&[(0, 0)]);
        assert!(matches!(fit_mca(&masked, 1), Err(Error::Config(_))));
    }

    #[test]
    fn identical_rows_have_empty_categories() {
        let blocks = BlockStructure::new(vec![2, 2]).unwrap();
        let cells: Vec<_> = (0..4).flat_map(|_| [Some(0), Some(1)]).collect();
        let g = IndicatorMatrix::from_cells(blocks, 4, &cells).unwrap();
        assert!(row_center(g.values()).amax() == 0.0);
        assert!(matches!(fit_mca(&g, 1), Err(Error::DegenerateCategory { column: 1 })));
    }
}
