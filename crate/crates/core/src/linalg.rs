//! Dense linear-algebra primitives: thin SVD with a deterministic sign
//! convention, the row-centering operator `J`, the block column-centering
//! operator `J_c`, and the weighted (generalized) SVD used by classical MCA.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type DenseMatrix = DMatrix<f64>;

/// Singular values below `RANK_CUTOFF * phi_1` are treated as exact zeros.
pub const RANK_CUTOFF: f64 = 1e-12;

/// Column layout of a super indicator matrix: one contiguous block per variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockStructure {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockStructure {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.contains(&0) {
            return Err(Error::Shape("every block needs at least one column".into()));
        }
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for &k in &sizes {
            offsets.push(acc);
            acc += k;
        }
        Ok(Self { sizes, offsets })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Number of variables `J`.
    pub fn n_blocks(&self) -> usize {
        self.sizes.len()
    }

    /// Total number of categories `K`.
    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn range(&self, j: usize) -> std::ops::Range<usize> {
        self.offsets[j]..self.offsets[j] + self.sizes[j]
    }

    pub fn ranges(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        (0..self.n_blocks()).map(move |j| self.range(j))
    }

    /// Block index owning column `col`.
    pub fn block_of(&self, col: usize) -> usize {
        match self.offsets.binary_search(&col) {
            Ok(j) => j,
            Err(j) => j - 1,
        }
    }

    /// `p* = min(n - 1, K - J)`.
    pub fn max_rank(&self, n: usize) -> usize {
        n.saturating_sub(1).min(self.total() - self.n_blocks())
    }
}

/// `M = P diag(phi) Q'` with orthonormal columns in `P` and `Q`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub left: DenseMatrix,
    pub singular_values: DVector<f64>,
    pub right: DenseMatrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.iter().filter(|&&s| s > 0.0).count()
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        let mut scaled = self.left.clone();
        for (s, mut col) in scaled.column_iter_mut().enumerate() {
            col *= self.singular_values[s];
        }
        scaled * self.right.transpose()
    }

    /// Keep only the leading `p` triplets.
    pub fn truncate(&self, p: usize) -> SvdResult {
        let p = p.min(self.singular_values.len());
        SvdResult {
            left: self.left.columns(0, p).into_owned(),
            singular_values: self.singular_values.rows(0, p).into_owned(),
            right: self.right.columns(0, p).into_owned(),
        }
    }
}

/// The SIMD kernels behind the SVD can return with the upper halves of the
/// vector registers dirty, after which every SSE-encoded libm call (`exp`
/// included) pays a state-transition penalty. Zeroing them avoids that.
#[inline]
fn clear_upper_vector_state() {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: `vzeroupper` touches only vector registers, all declared clobbered via the C ABI.
        unsafe { std::arch::asm!("vzeroupper", clobber_abi("C"), options(nomem, nostack)) };
    }
}

/// Thin SVD with nonincreasing singular values.
///
/// Each left singular vector is flipped so that its entry of largest absolute
/// value is positive (first such entry on ties); the paired right vector is
/// flipped with it.
pub fn thin_svd(m: &DenseMatrix) -> Result<SvdResult> {
    let (rows, cols) = m.shape();
    let width = rows.min(cols);
    if width == 0 {
        return Ok(SvdResult {
            left: DenseMatrix::zeros(rows, 0),
            singular_values: DVector::zeros(0),
            right: DenseMatrix::zeros(cols, 0),
        });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("SVD input has non-finite entries".into()));
    }
    let a = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
    let svd = a.thin_svd().map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")));
    clear_upper_vector_state();
    let svd = svd?;
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let mut left = DenseMatrix::from_fn(rows, width, |i, j| u[(i, j)]);
    let mut right = DenseMatrix::from_fn(cols, width, |i, j| v[(i, j)]);
    let mut values = DVector::from_fn(width, |i, _| s[i]);

    let top = values.iter().cloned().fold(0.0_f64, f64::max);
    for s in values.iter_mut() {
        if *s < RANK_CUTOFF * top || top == 0.0 {
            *s = 0.0;
        }
    }
    debug_assert!(values.as_slice().windows(2).all(|w| w[0] >= w[1]));

    for s in 0..width {
        let col = left.column(s);
        let mut pivot = 0;
        for i in 1..rows {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        if col[pivot] < 0.0 {
            left.column_mut(s).neg_mut();
            right.column_mut(s).neg_mut();
        }
    }
    Ok(SvdResult {
        left,
        singular_values: values,
        right,
    })
}

/// `J M` with `J = I - 11'/n`.
pub fn row_center(m: &DenseMatrix) -> DenseMatrix {
    let mut out = m.clone();
    let n = m.nrows();
    if n == 0 {
        return out;
    }
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
    }
    out
}

/// `M J_c` where `J_c` centers every row within each variable block.
pub fn block_center(m: &DenseMatrix, blocks: &BlockStructure) -> Result<DenseMatrix> {
    if m.ncols() != blocks.total() {
        return Err(Error::Shape(format!(
            "matrix has {} columns but the block structure spans {}",
            m.ncols(),
            blocks.total()
        )));
    }
    let mut out = m.clone();
    for i in 0..m.nrows() {
        for range in blocks.ranges() {
            let k = range.len() as f64;
            let mean = range.clone().map(|c| m[(i, c)]).sum::<f64>() / k;
            for c in range {
                out[(i, c)] -= mean;
            }
        }
    }
    Ok(out)
}

/// Generalized SVD of the triplet `(M, col_weights, row_weights)`.
///
/// Returns `M = U diag(phi) V'` with `U' R U = I` and `V' C V = I`, where `R`
/// and `C` are the diagonal row and column weights.
pub fn weighted_gsvd(m: &DenseMatrix, row_weights: &[f64], col_weights: &[f64]) -> Result<SvdResult> {
    if row_weights.len() != m.nrows() || col_weights.len() != m.ncols() {
        return Err(Error::Shape(format!(
            "weights of length ({}, {}) for a {}x{} matrix",
            row_weights.len(),
            col_weights.len(),
            m.nrows(),
            m.ncols()
        )));
    }
    if let Some(&w) = row_weights
        .iter()
        .chain(col_weights)
        .find(|&&w| !(w > 0.0 && w.is_finite()))
    {
        return Err(Error::Weight(w));
    }
    let row_sqrt: Vec<f64> = row_weights.iter().map(|w| w.sqrt()).collect();
    let col_sqrt: Vec<f64> = col_weights.iter().map(|w| w.sqrt()).collect();

    let scaled = DenseMatrix::from_fn(m.nrows(), m.ncols(), |i, j| row_sqrt[i] * m[(i, j)] * col_sqrt[j]);
    let mut svd = thin_svd(&scaled)?;
    for (i, mut row) in svd.left.row_iter_mut().enumerate() {
        row /= row_sqrt[i];
    }
    for (j, mut row) in svd.right.row_iter_mut().enumerate() {
        row /= col_sqrt[j];
    }
    Ok(svd)
}

/// Orthonormal columns spanning the constant vector `1/sqrt(n)`.
pub fn ones_basis(n: usize) -> DenseMatrix {
    DenseMatrix::from_element(n, 1, 1.0 / (n as f64).sqrt())
}

/// Orthonormal columns spanning the per-block indicator vectors.
pub fn block_indicator_basis(blocks: &BlockStructure) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(blocks.total(), blocks.n_blocks());
    for (j, range) in blocks.ranges().enumerate() {
        let v = 1.0 / (range.len() as f64).sqrt();
        for c in range {
            out[(c, j)] = v;
        }
    }
    out
}

/// Orthonormalizes `cols` against `constraint` and against each other.
///
/// The first `keep` columns are retained (projected and renormalized); the
/// remaining columns up to `width` are replaced by unit vectors completed by
/// Gram-Schmidt in the orthogonal complement of `constraint`. A kept column
/// that collapses under projection is replaced the same way.
pub fn constrained_orthonormal(cols: &DenseMatrix, keep: usize, constraint: &DenseMatrix, width: usize) -> DenseMatrix {
    let dim = cols.nrows();
    let mut out = DenseMatrix::zeros(dim, width);
    let mut next_candidate = 0usize;

    let orthogonalize = |v: &mut DVector<f64>, out: &DenseMatrix, filled: usize| {
        for _ in 0..2 {
            for c in constraint.column_iter() {
                let proj = c.dot(v);
                v.axpy(-proj, &c, 1.0);
            }
            for c in out.columns(0, filled).column_iter() {
                let proj = c.dot(v);
                v.axpy(-proj, &c, 1.0);
            }
        }
    };

    for s in 0..width {
        let mut accepted = None;
        if s < keep && s < cols.ncols() {
            let mut v = cols.column(s).into_owned();
            let before = v.norm();
            orthogonalize(&mut v, &out, s);
            let after = v.norm();
            if before > 0.0 && after > 0.5 * before {
                accepted = Some(v / after);
            }
        }
        while accepted.is_none() && next_candidate < dim {
            let mut v = DVector::zeros(dim);
            v[next_candidate] = 1.0;
            next_candidate += 1;
            orthogonalize(&mut v, &out, s);
            let norm = v.norm();
            if norm > 1e-6 {
                accepted = Some(v / norm);
            }
        }
        match accepted {
            Some(v) => out.set_column(s, &v),
            None => panic!("constrained_orthonormal: width {width} exceeds the available dimension"),
        }
    }
    out
}
