//! Categorical tables, their super indicator coding, and multinomial
//! simulation from a given parameter set.
//!
//! Categories are enumerated per column in order of first appearance in the
//! file, so labels stay stable when a file is parsed again. A missing cell is
//! coded as a block of zeros in both the indicator values and the mask.

use std::io::{Read, Write};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{block_indicator_basis, constrained_orthonormal, ones_basis, BlockStructure, DenseMatrix};

pub const DEFAULT_NA_TOKEN: &str = "NA";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variable {
    pub name: String,
    pub categories: Vec<String>,
}

/// A rectangular table of categorical answers; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalDataset {
    variables: Vec<Variable>,
    n: usize,
    cells: Vec<Option<usize>>,
}

impl CategoricalDataset {
    /// `cells` is row-major, `n` rows by `variables.len()` columns.
    pub fn new(variables: Vec<Variable>, cells: Vec<Option<usize>>) -> Result<Self> {
        let n_vars = variables.len();
        if n_vars == 0 {
            return Err(Error::Shape("a dataset needs at least one variable".into()));
        }
        if !cells.len().is_multiple_of(n_vars) {
            return Err(Error::Shape(format!("{} cells do not fill rows of {n_vars} variables", cells.len())));
        }
        for var in &variables {
            if var.categories.len() < 2 {
                return Err(Error::DegenerateVariable { name: var.name.clone() });
            }
            let mut seen = std::collections::HashSet::new();
            if !var.categories.iter().all(|c| seen.insert(c)) {
                return Err(Error::Parse(format!("duplicate category label in `{}`", var.name)));
            }
        }
        let n = cells.len() / n_vars;
        for (idx, cell) in cells.iter().enumerate() {
            if let Some(k) = *cell {
                let var = &variables[idx % n_vars];
                if k >= var.categories.len() {
                    return Err(Error::Shape(format!(
                        "category index {k} out of range for `{}` ({} categories)",
                        var.name,
                        var.categories.len()
                    )));
                }
            }
        }
        Ok(Self { variables, n, cells })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn cell(&self, i: usize, j: usize) -> Option<usize> {
        self.cells[i * self.n_vars() + j]
    }

    pub fn blocks(&self) -> BlockStructure {
        BlockStructure::new(self.variables.iter().map(|v| v.categories.len()).collect())
            .expect("variables carry at least two categories")
    }

    pub fn has_missing(&self) -> bool {
        self.cells.iter().any(Option::is_none)
    }

    /// Decodes an indicator matrix back into a table with the given labels.
    pub fn from_indicator(g: &IndicatorMatrix, variables: Vec<Variable>) -> Result<Self> {
        let sizes: Vec<usize> = variables.iter().map(|v| v.categories.len()).collect();
        if sizes != g.blocks().sizes() {
            return Err(Error::Shape("labels do not match the indicator block structure".into()));
        }
        let mut cells = Vec::with_capacity(g.n() * variables.len());
        for i in 0..g.n() {
            for j in 0..variables.len() {
                cells.push(g.category(i, j));
            }
        }
        Self::new(variables, cells)
    }

    pub fn write_csv<W: Write>(&self, writer: W, na_token: &str) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(self.variables.iter().map(|v| v.name.as_str()))?;
        for i in 0..self.n {
            let row = (0..self.n_vars()).map(|j| match self.cell(i, j) {
                Some(k) => self.variables[j].categories[k].as_str(),
                None => na_token,
            });
            out.write_record(row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Reads a comma-separated table with a header row of variable names.
pub fn parse_csv<R: Read>(reader: R, na_token: &str) -> Result<CategoricalDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if names.is_empty() {
        return Err(Error::Parse("empty header".into()));
    }
    let mut labels: Vec<Vec<String>> = vec![Vec::new(); names.len()];
    let mut cells = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse(e.to_string()))?;
        for (j, field) in record.iter().enumerate() {
            if field == na_token {
                cells.push(None);
                continue;
            }
            let idx = match labels[j].iter().position(|l| l == field) {
                Some(idx) => idx,
                None => {
                    labels[j].push(field.to_owned());
                    labels[j].len() - 1
                }
            };
            cells.push(Some(idx));
        }
    }
    let variables = names
        .into_iter()
        .zip(labels)
        .map(|(name, categories)| Variable { name, categories })
        .collect::<Vec<_>>();
    if let Some(var) = variables.iter().find(|v| v.categories.len() < 2) {
        return Err(Error::DegenerateVariable { name: var.name.clone() });
    }
    CategoricalDataset::new(variables, cells)
}

/// The n x K super indicator matrix `G` with its observation mask `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorMatrix {
    values: DenseMatrix,
    mask: DenseMatrix,
    blocks: BlockStructure,
}

impl IndicatorMatrix {
    /// Builds `G` and `W` from per-cell category indices (row-major, `None` = missing).
    pub fn from_cells(blocks: BlockStructure, n: usize, cells: &[Option<usize>]) -> Result<Self> {
        let n_vars = blocks.n_blocks();
        if cells.len() != n * n_vars {
            return Err(Error::Shape(format!("expected {} cells, got {}", n * n_vars, cells.len())));
        }
        let k = blocks.total();
        let mut values = DenseMatrix::zeros(n, k);
        let mut mask = DenseMatrix::zeros(n, k);
        for i in 0..n {
            for j in 0..n_vars {
                if let Some(cat) = cells[i * n_vars + j] {
                    let range = blocks.range(j);
                    if cat >= range.len() {
                        return Err(Error::Shape(format!("category {cat} out of range in block {j}")));
                    }
                    values[(i, range.start + cat)] = 1.0;
                    for c in range {
                        mask[(i, c)] = 1.0;
                    }
                }
            }
        }
        Ok(Self { values, mask, blocks })
    }

    pub fn values(&self) -> &DenseMatrix {
        &self.values
    }

    pub fn mask(&self) -> &DenseMatrix {
        &self.mask
    }

    pub fn blocks(&self) -> &BlockStructure {
        &self.blocks
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn k(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_vars(&self) -> usize {
        self.blocks.n_blocks()
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask[(i, self.blocks.offsets()[j])] > 0.0
    }

    pub fn category(&self, i: usize, j: usize) -> Option<usize> {
        if !self.is_observed(i, j) {
            return None;
        }
        self.blocks.range(j).position(|c| self.values[(i, c)] > 0.0)
    }

    pub fn is_fully_observed(&self) -> bool {
        self.mask.iter().all(|&w| w > 0.0)
    }

    /// Observed `(i, j)` cells in row-major order.
    pub fn observed_cells(&self) -> Vec<(usize, usize)> {
        (0..self.n())
            .flat_map(|i| (0..self.n_vars()).map(move |j| (i, j)))
            .filter(|&(i, j)| self.is_observed(i, j))
            .collect()
    }

    /// Copy with the listed cells turned into missing cells.
    pub fn with_cells_masked(&self, cells: &[(usize, usize)]) -> Self {
        let mut out = self.clone();
        for &(i, j) in cells {
            for c in self.blocks.range(j) {
                out.values[(i, c)] = 0.0;
                out.mask[(i, c)] = 0.0;
            }
        }
        out
    }

    /// Dense 0/1 dump of the indicator values, one row per observation.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        for row in self.values.row_iter() {
            out.write_record(row.iter().map(|&x| if x > 0.0 { "1" } else { "0" }))?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn build_indicator(data: &CategoricalDataset) -> IndicatorMatrix {
    IndicatorMatrix::from_cells(data.blocks(), data.n(), &data.cells).expect("dataset invariants guarantee a valid coding")
}

/// Column sums `1'G`: observed count of every category.
pub fn category_margins(g: &IndicatorMatrix) -> DVector<f64> {
    g.values().row_sum().transpose()
}

/// Mixes a base seed with an index into an independent 64-bit seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws every cell independently from the softmax of `mu_j + interaction_ij`.
pub fn simulate_multinomial(
    mu: &[f64],
    interaction: &DenseMatrix,
    blocks: &BlockStructure,
    seed: u64,
) -> Result<IndicatorMatrix> {
    simulate_with_pattern(mu, interaction, blocks, seed, None)
}

/// As [`simulate_multinomial`], leaving missing every cell that is missing in `pattern`.
pub fn simulate_with_pattern(
    mu: &[f64],
    interaction: &DenseMatrix,
    blocks: &BlockStructure,
    seed: u64,
    pattern: Option<&IndicatorMatrix>,
) -> Result<IndicatorMatrix> {
    let k = blocks.total();
    if mu.len() != k || interaction.ncols() != k {
        return Err(Error::Shape(format!(
            "mu has {} entries and the interaction {} columns; the blocks span {k}",
            mu.len(),
            interaction.ncols()
        )));
    }
    let n = interaction.nrows();
    if let Some(p) = pattern {
        if p.n() != n || p.blocks() != blocks {
            return Err(Error::Shape("missing-value pattern does not match the simulation shape".into()));
        }
    }
    let n_vars = blocks.n_blocks();
    let mut cells = Vec::with_capacity(n * n_vars);
    let mut probs = Vec::new();
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        for (j, range) in blocks.ranges().enumerate() {
            // One 64-bit draw per cell at a fixed position keyed by (seed, i, j).
            rng.set_word_pos(2 * j as u128);
            let u: f64 = rng.random();
            if pattern.is_some_and(|p| !p.is_observed(i, j)) {
                cells.push(None);
                continue;
            }
            probs.clear();
            probs.extend(range.clone().map(|c| mu[c] + interaction[(i, c)]));
            if probs.iter().any(|t| !t.is_finite()) {
                return Err(Error::Numerical(format!("non-finite linear predictor in cell ({i}, {j})")));
            }
            crate::mmca::softmax_in_place(&mut probs);
            let mut acc = 0.0;
            let mut pick = probs.len() - 1;
            for (idx, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = idx;
                    break;
                }
            }
            cells.push(Some(pick));
        }
    }
    IndicatorMatrix::from_cells(blocks.clone(), n, &cells)
}

/// A planted interaction `U D V'` with `1'U = 0`, `U'U = I` and block-centered
/// orthonormal `V`, both drawn from standard Gaussians keyed by `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedInteraction {
    pub u: DenseMatrix,
    pub d: Vec<f64>,
    pub v: DenseMatrix,
}

impl PlantedInteraction {
    pub fn new(n: usize, blocks: &BlockStructure, d: &[f64], seed: u64) -> Result<Self> {
        let max = blocks.max_rank(n);
        if d.len() > max {
            return Err(Error::Rank { requested: d.len(), max });
        }
        if d.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Config("planted singular values must be finite and nonnegative".into()));
        }
        let p = d.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw_u = DenseMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal));
        let raw_v = DenseMatrix::from_fn(blocks.total(), p, |_, _| rng.sample(StandardNormal));
        let u = constrained_orthonormal(&raw_u, p, &ones_basis(n), p);
        let v = constrained_orthonormal(&raw_v, p, &block_indicator_basis(blocks), p);
        Ok(Self { u, d: d.to_vec(), v })
    }

    pub fn interaction(&self) -> DenseMatrix {
        let mut ud = self.u.clone();
        for (s, &d) in self.d.iter().enumerate() {
            ud.column_mut(s).scale_mut(d);
        }
        ud * self.v.transpose()
    }
}
