//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for parse, input, usage and configuration
//! errors, 2 for numerical failures and degenerate categories, 3 when a fit
//! stops at the iteration cap without converging (its output is still
//! written). Every output file is written through a temporary file in the
//! target directory and renamed into place, and nothing is written until all
//! outputs of a command have been computed.

mod svg;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    build_indicator, derive_seed, parse_csv, simulate_multinomial, CategoricalDataset, IndicatorMatrix,
    PlantedInteraction, Variable, DEFAULT_NA_TOKEN,
};
use crate::error::{Error, Result};
use crate::linalg::{BlockStructure, DenseMatrix};
use crate::mca::{fit_mca, reconstruct, row_sum_check};
use crate::mmca::{
    biplot_coords, fit, BiplotCoords, BiplotScaling, FitConfig, FitReport, VariableLabels, DEFAULT_EPSILON,
    DEFAULT_MAX_ITER, FORMAT_VERSION,
};
use crate::selection::{cross_validate, lambda_grid, qut_lambda, CvConfig, CvResult, QutConfig, QutResult, DEFAULT_REPLICATES};

pub use svg::render_svg;

/// Environment variable that, when set, replaces the `--seed` value.
pub const SEED_ENV: &str = "MMCA_SEED";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mmca", version, about = "Multinomial multiple correspondence analysis")]
pub struct CliConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the penalized low-rank multinomial model.
    Fit(FitArgs),
    /// Classical multiple correspondence analysis.
    Mca(McaArgs),
    /// Pick the rank by QUT, then the penalty by cross-validation.
    Select(SelectArgs),
    /// Cross-validate the penalty at a fixed rank.
    Cv(CvArgs),
    /// Draw a categorical table from the model.
    Simulate(SimulateArgs),
    /// Export biplot coordinates and an SVG scatter from a fit.
    Biplot(BiplotArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Input CSV with a header row.
    #[arg(short, long)]
    pub input: PathBuf,
    /// Token marking a missing cell.
    #[arg(long, default_value = DEFAULT_NA_TOKEN)]
    pub na_token: String,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Relative decrease of the penalized deviance below which the fit stops.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Iteration cap.
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Explicit comma-separated penalty grid (overrides the min/max/count spec).
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub grid: Option<Vec<f64>>,
    #[arg(long)]
    pub grid_min: Option<f64>,
    #[arg(long)]
    pub grid_max: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub grid_count: usize,
    /// Space the grid logarithmically.
    #[arg(long)]
    pub log_grid: bool,
}

#[derive(Debug, Args)]
pub struct SeedArgs {
    /// Base seed; overridden by MMCA_SEED when set.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Output FitResult JSON.
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(short, long)]
    pub rank: usize,
    /// Penalty weight on the sum of singular values.
    #[arg(short, long)]
    pub lambda: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Also write PREFIX.csv and PREFIX.svg with biplot coordinates.
    #[arg(long, value_name = "PREFIX")]
    pub biplot: Option<PathBuf>,
    #[arg(long, default_value = "interaction")]
    pub scaling: BiplotScaling,
}

#[derive(Debug, Args)]
pub struct McaArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Output coordinate CSV.
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(short, long, default_value_t = 2)]
    pub rank: usize,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Output JSON holding the QUT and CV results.
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = DEFAULT_REPLICATES)]
    pub replicates: usize,
    /// Level of the threshold quantile; defaults to 1/sqrt(log(max(n, K - J))).
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    pub threads: Option<usize>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(short, long)]
    pub rank: usize,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
    #[arg(long)]
    pub threads: Option<usize>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output CSV; the ground truth goes to a sidecar `.truth.json`.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Number of rows.
    #[arg(short, long)]
    pub n: usize,
    /// Comma-separated number of categories of every variable.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub categories: Vec<usize>,
    /// Planted rank; must match the number of singular values when both are given.
    #[arg(short, long)]
    pub rank: Option<usize>,
    /// Comma-separated planted singular values.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub singular_values: Vec<f64>,
    /// Comma-separated main effects, one per category; zero when absent.
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_hyphen_values = true)]
    pub mu: Option<Vec<f64>>,
    #[command(flatten)]
    pub seed: SeedArgs,
}

#[derive(Debug, Args)]
pub struct BiplotArgs {
    /// FitResult JSON written by `fit`.
    #[arg(short, long)]
    pub input: PathBuf,
    /// Writes PREFIX.csv, and PREFIX.svg when the rank is at least two.
    #[arg(short, long, value_name = "PREFIX")]
    pub output: PathBuf,
    #[arg(long, default_value = "interaction")]
    pub scaling: BiplotScaling,
    /// One-based dimensions to plot.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2])]
    pub dims: Vec<usize>,
}

/// JSON written by `select` and `cv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub format_version: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub qut: Option<QutResult>,
    pub cv: CvResult,
}

/// Sidecar JSON written by `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTruth {
    pub format_version: u32,
    pub seed: u64,
    pub n: usize,
    pub block_sizes: Vec<usize>,
    pub rank: usize,
    pub mu: Vec<f64>,
    pub d: Vec<f64>,
    #[serde(rename = "U")]
    pub u: Vec<Vec<f64>>,
    #[serde(rename = "V")]
    pub v: Vec<Vec<f64>>,
}

/// Exit class of a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numerical(_) | Error::DegenerateCategory { .. } | Error::Weight(_) => EXIT_NUMERICAL,
        _ => EXIT_INPUT,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let config = match CliConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&config) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(config: &CliConfig) -> Result<i32> {
    match &config.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Mca(a) => cmd_mca(a),
        Command::Select(a) => cmd_select(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Biplot(a) => cmd_biplot(a),
    }
}

fn resolve_seed(args: &SeedArgs) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(text) => text
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={text:?} is not an unsigned integer"))),
        Err(_) => Ok(args.seed),
    }
}

fn check_solver(args: &SolverArgs) -> Result<()> {
    if !(args.epsilon > 0.0 && args.epsilon.is_finite()) {
        return Err(Error::Config(format!("--epsilon must be positive, got {}", args.epsilon)));
    }
    Ok(())
}

fn check_threads(threads: Option<usize>) -> Result<()> {
    if threads == Some(0) {
        return Err(Error::Config("--threads must be at least one".into()));
    }
    Ok(())
}

fn read_table(args: &InputArgs) -> Result<(CategoricalDataset, IndicatorMatrix)> {
    let file = std::fs::File::open(&args.input)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", args.input.display())))?;
    let data = parse_csv(std::io::BufReader::new(file), &args.na_token)?;
    let g = build_indicator(&data);
    Ok((data, g))
}

/// Writes every `(path, bytes)` pair through a temporary file renamed into place.
pub fn write_atomic(outputs: &[(PathBuf, Vec<u8>)]) -> Result<()> {
    for (path, bytes) in outputs {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    }
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn category_labels(variables: &[VariableLabels]) -> Vec<String> {
    variables
        .iter()
        .flat_map(|v| v.categories.iter().map(move |c| format!("{}:{}", v.name, c)))
        .collect()
}

/// `kind,label,dim1,...` with one line per row point, then one per category.
fn coordinates_csv(rows: &DenseMatrix, categories: &DenseMatrix, labels: &[String]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["kind".to_string(), "label".to_string()];
    header.extend((1..=rows.ncols()).map(|s| format!("dim{s}")));
    w.write_record(&header)?;
    for (i, row) in rows.row_iter().enumerate() {
        let mut rec = vec!["row".to_string(), (i + 1).to_string()];
        rec.extend(row.iter().map(|x| format!("{x:.12e}")));
        w.write_record(&rec)?;
    }
    for (label, row) in labels.iter().zip(categories.row_iter()) {
        let mut rec = vec!["category".to_string(), label.clone()];
        rec.extend(row.iter().map(|x| format!("{x:.12e}")));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn labels_of(variables: &[Variable]) -> Vec<VariableLabels> {
    variables
        .iter()
        .map(|v| VariableLabels { name: v.name.clone(), categories: v.categories.clone() })
        .collect()
}

/// Biplot CSV and, when there are at least two dimensions, the SVG.
fn biplot_outputs(
    report: &FitReport,
    scaling: BiplotScaling,
    dims: (usize, usize),
    prefix: &Path,
) -> Result<Vec<(PathBuf, Vec<u8>)>> {
    let params = report.params()?;
    let coords: BiplotCoords = biplot_coords(&params, scaling);
    let labels = category_labels(&report.variables);
    if labels.len() != params.v.nrows() {
        return Err(Error::Shape("category labels do not match the fit".into()));
    }
    let mut outputs = vec![(with_suffix(prefix, ".csv"), coordinates_csv(&coords.rows, &coords.categories, &labels)?)];
    if params.rank() < 2 {
        log::warn!("rank {} fit has fewer than two dimensions; writing coordinates only", params.rank());
        return Ok(outputs);
    }
    let (a, b) = dims;
    if a == 0 || b == 0 || a > params.rank() || b > params.rank() || a == b {
        return Err(Error::Config(format!("dimensions ({a}, {b}) invalid for a rank {} fit", params.rank())));
    }
    let svg = render_svg(&coords, &labels, (a - 1, b - 1), &report.d);
    outputs.push((with_suffix(prefix, ".svg"), svg.into_bytes()));
    Ok(outputs)
}

pub fn cmd_fit(args: &FitArgs) -> Result<i32> {
    check_solver(&args.solver)?;
    if !(args.lambda >= 0.0 && args.lambda.is_finite()) {
        return Err(Error::Config(format!("--lambda must be finite and nonnegative, got {}", args.lambda)));
    }
    let (data, g) = read_table(&args.input)?;
    let config =
        FitConfig { epsilon: args.solver.epsilon, max_iter: args.solver.max_iter, ..FitConfig::new(args.rank, args.lambda) };
    let result = fit(&g, &config)?;
    let report = FitReport::new(&result, data.variables());
    let mut outputs = vec![(args.output.clone(), report.to_json()?.into_bytes())];
    if let Some(prefix) = &args.biplot {
        outputs.extend(biplot_outputs(&report, args.scaling, (1, 2), prefix)?);
    }
    write_atomic(&outputs)?;
    println!(
        "iterations {}  penalized deviance {:.6}  effective rank {}",
        result.iterations,
        result.objective(),
        result.effective_rank
    );
    if result.converged {
        Ok(EXIT_OK)
    } else {
        eprintln!("warning: no convergence after {} iterations", result.iterations);
        Ok(EXIT_NOT_CONVERGED)
    }
}

pub fn cmd_mca(args: &McaArgs) -> Result<i32> {
    let (data, g) = read_table(&args.input)?;
    let result = fit_mca(&g, args.rank)?;
    let labels = category_labels(&labels_of(data.variables()));
    let csv = coordinates_csv(&result.x, &result.a, &labels)?;
    let full = fit_mca(&g, g.blocks().max_rank(g.n()))?;
    let (block_dev, grand_dev) = row_sum_check(&g, &reconstruct(&full));
    write_atomic(&[(args.output.clone(), csv)])?;
    let values: Vec<String> = result.singular_values.iter().map(|s| format!("{s:.6}")).collect();
    println!("singular values {}", values.join(" "));
    println!("row sums of G_hat: max |block sum - 1| = {block_dev:.3e}, max |row sum - {}| = {grand_dev:.3e}", g.n_vars());
    Ok(EXIT_OK)
}

fn resolve_grid(grid: &GridArgs, default_max: Option<f64>) -> Result<Vec<f64>> {
    if let Some(values) = &grid.grid {
        if grid.grid_min.is_some() || grid.grid_max.is_some() {
            return Err(Error::Config("--grid excludes --grid-min and --grid-max".into()));
        }
        if values.is_empty()
            || values.iter().any(|l| !(l.is_finite() && *l >= 0.0))
            || values.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::Config("--grid must be finite, nonnegative and strictly increasing".into()));
        }
        return Ok(values.clone());
    }
    let max = grid
        .grid_max
        .or(default_max)
        .ok_or_else(|| Error::Config("give --grid or --grid-max".into()))?;
    lambda_grid(grid.grid_min.unwrap_or(0.0), max, grid.grid_count, grid.log_grid)
}

fn check_grid_spec(grid: &GridArgs, needs_max: bool) -> Result<()> {
    if grid.grid.is_some() {
        return resolve_grid(grid, None).map(|_| ());
    }
    if needs_max && grid.grid_max.is_none() {
        return Err(Error::Config("give --grid or --grid-max".into()));
    }
    if grid.grid_count == 0 {
        return Err(Error::Config("--grid-count must be positive".into()));
    }
    Ok(())
}

fn selection_json(report: &SelectionReport) -> Result<Vec<u8>> {
    Ok((serde_json::to_string_pretty(report)? + "\n").into_bytes())
}

pub fn cmd_select(args: &SelectArgs) -> Result<i32> {
    check_solver(&args.solver)?;
    check_threads(args.threads)?;
    check_grid_spec(&args.grid, false)?;
    let seed = resolve_seed(&args.seed)?;
    let (_, g) = read_table(&args.input)?;
    let qut_config = QutConfig {
        replicates: args.replicates,
        alpha_override: args.alpha,
        threads: args.threads,
        epsilon: args.solver.epsilon,
        max_iter: args.solver.max_iter,
        ..QutConfig::new(seed)
    };
    let qut = qut_lambda(&g, &qut_config)?;
    let grid = resolve_grid(&args.grid, Some(qut.lambda_qut))?;
    let cv_config = CvConfig {
        threads: args.threads,
        epsilon: args.solver.epsilon,
        max_iter: args.solver.max_iter,
        ..CvConfig::new(args.folds, derive_seed(seed, u64::MAX))
    };
    let cv = cross_validate(&g, qut.estimated_rank, &grid, &cv_config)?;
    println!("lambda_qut {}", qut.lambda_qut);
    println!("estimated rank {}", qut.estimated_rank);
    println!("lambda_star {}", cv.lambda_star);
    let report = SelectionReport { format_version: FORMAT_VERSION, qut: Some(qut), cv };
    write_atomic(&[(args.output.clone(), selection_json(&report)?)])?;
    Ok(EXIT_OK)
}

pub fn cmd_cv(args: &CvArgs) -> Result<i32> {
    check_solver(&args.solver)?;
    check_threads(args.threads)?;
    check_grid_spec(&args.grid, true)?;
    let seed = resolve_seed(&args.seed)?;
    let (_, g) = read_table(&args.input)?;
    let grid = resolve_grid(&args.grid, None)?;
    let config = CvConfig {
        threads: args.threads,
        epsilon: args.solver.epsilon,
        max_iter: args.solver.max_iter,
        ..CvConfig::new(args.folds, seed)
    };
    let cv = cross_validate(&g, args.rank, &grid, &config)?;
    println!("lambda_star {}", cv.lambda_star);
    let report = SelectionReport { format_version: FORMAT_VERSION, qut: None, cv };
    write_atomic(&[(args.output.clone(), selection_json(&report)?)])?;
    Ok(EXIT_OK)
}

/// `data.csv` becomes `data.truth.json`.
pub fn truth_path(output: &Path) -> PathBuf {
    output.with_extension("truth.json")
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<i32> {
    if args.n == 0 {
        return Err(Error::Shape("--n must be positive".into()));
    }
    let blocks = BlockStructure::new(args.categories.clone())?;
    if args.categories.iter().any(|&k| k < 2) {
        return Err(Error::Shape("every variable needs at least two categories".into()));
    }
    if let Some(r) = args.rank {
        if r != args.singular_values.len() {
            return Err(Error::Config(format!(
                "--rank {r} disagrees with {} singular values",
                args.singular_values.len()
            )));
        }
    }
    let mu = args.mu.clone().unwrap_or_else(|| vec![0.0; blocks.total()]);
    if mu.len() != blocks.total() || mu.iter().any(|m| !m.is_finite()) {
        return Err(Error::Shape(format!("--mu needs {} finite values", blocks.total())));
    }
    let seed = resolve_seed(&args.seed)?;
    let planted = PlantedInteraction::new(args.n, &blocks, &args.singular_values, derive_seed(seed, 0))?;
    let g = simulate_multinomial(&mu, &planted.interaction(), &blocks, derive_seed(seed, 1))?;
    let variables: Vec<Variable> = args
        .categories
        .iter()
        .enumerate()
        .map(|(j, &k)| Variable {
            name: format!("V{}", j + 1),
            categories: (1..=k).map(|c| format!("c{c}")).collect(),
        })
        .collect();
    let data = CategoricalDataset::from_indicator(&g, variables)?;
    let mut csv = Vec::new();
    data.write_csv(&mut csv, DEFAULT_NA_TOKEN)?;
    let rows = |m: &DenseMatrix| -> Vec<Vec<f64>> { m.row_iter().map(|r| r.iter().copied().collect()).collect() };
    let truth = SimulationTruth {
        format_version: FORMAT_VERSION,
        seed,
        n: args.n,
        block_sizes: args.categories.clone(),
        rank: planted.d.len(),
        mu,
        d: planted.d.clone(),
        u: rows(&planted.u),
        v: rows(&planted.v),
    };
    let json = serde_json::to_string_pretty(&truth)? + "\n";
    write_atomic(&[(args.output.clone(), csv), (truth_path(&args.output), json.into_bytes())])?;
    Ok(EXIT_OK)
}

pub fn cmd_biplot(args: &BiplotArgs) -> Result<i32> {
    let &[a, b] = args.dims.as_slice() else {
        return Err(Error::Config("--dims takes exactly two dimensions".into()));
    };
    let text = std::fs::read_to_string(&args.input)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", args.input.display())))?;
    let report = FitReport::from_json(&text)?;
    let outputs = biplot_outputs(&report, args.scaling, (a, b), &args.output)?;
    write_atomic(&outputs)?;
    Ok(EXIT_OK)
}
