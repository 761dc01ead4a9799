//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test --test acceptance`; pass criterion numbers as
//! arguments (`-- 2 3`) to run a subset.

use std::process::Command;
use std::time::Instant;

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use mmca_core::dataset::{
    category_margins, derive_seed, simulate_multinomial, simulate_with_pattern, IndicatorMatrix, PlantedInteraction,
};
use mmca_core::linalg::{row_center, BlockStructure};
use mmca_core::mca::{fit_mca, reconstruct, row_sum_check};
use mmca_core::mmca::{
    block_deviance, deviance, deviance_gradient_block, fit, hessian_block, linear_predictor, majorizer_value,
    softmax_in_place, softmax_probs, FitConfig, FitResult,
};
use mmca_core::selection::{cross_validate, lambda_grid, qut_lambda, CvConfig, QutConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: usize, name: &str, run: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = run();
    println!(
        "criterion {id:>2} {name:<18} {}  {} ({:.1} s)",
        if out.pass { "PASS" } else { "FAIL" },
        out.detail,
        start.elapsed().as_secs_f64()
    );
    out.pass
}

fn random_blocks(rng: &mut ChaCha8Rng, j_range: (usize, usize), k_range: (usize, usize)) -> BlockStructure {
    let j = rng.random_range(j_range.0..=j_range.1);
    BlockStructure::new((0..j).map(|_| rng.random_range(k_range.0..=k_range.1)).collect()).unwrap()
}

/// Random main effects and a random planted interaction of rank up to two.
fn random_table(rng: &mut ChaCha8Rng, n: usize, blocks: &BlockStructure, missing: f64) -> IndicatorMatrix {
    let mu: Vec<f64> = (0..blocks.total()).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
    let p = blocks.max_rank(n).min(2);
    let d: Vec<f64> = (0..p).map(|s| rng.random_range(2.0..12.0) / (s + 1) as f64).collect();
    let planted = PlantedInteraction::new(n, blocks, &d, rng.random()).unwrap();
    let pattern = if missing > 0.0 {
        let cells: Vec<Option<usize>> =
            (0..n * blocks.n_blocks()).map(|_| if rng.random::<f64>() < missing { None } else { Some(0) }).collect();
        Some(IndicatorMatrix::from_cells(blocks.clone(), n, &cells).unwrap())
    } else {
        None
    };
    simulate_with_pattern(&mu, &planted.interaction(), blocks, rng.random(), pattern.as_ref()).unwrap()
}

fn descent() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let lambdas = [0.0, 0.1, 1.0, 10.0];
    let mut worst_rise = f64::NEG_INFINITY;
    let mut failures = 0;
    let mut errors = 0;
    let mut first_failure = String::new();
    let start = Instant::now();
    for inst in 0..100 {
        let n = rng.random_range(10..=200);
        let blocks = random_blocks(&mut rng, (2, 10), (2, 5));
        let missing = if inst % 2 == 0 { 0.0 } else { 0.1 };
        let g = random_table(&mut rng, n, &blocks, missing);
        let rank = rng.random_range(1..=blocks.max_rank(n).min(3));
        let lambda = lambdas[inst % 4];
        match fit(&g, &FitConfig { max_iter: 2000, ..FitConfig::new(rank, lambda) }) {
            Ok(r) => {
                for (t, w) in r.deviance_trace.windows(2).enumerate() {
                    worst_rise = worst_rise.max(w[1] - w[0]);
                    if w[1] > w[0] + 1e-10 {
                        if failures == 0 {
                            first_failure = format!(
                                "; first at instance {inst} (n {n}, sizes {:?}, rank {rank}, lambda {lambda}, missing {missing}) step {t}: {} -> {}",
                                blocks.sizes(),
                                w[0],
                                w[1]
                            );
                        }
                        failures += 1;
                    }
                }
            }
            Err(_) => errors += 1,
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: failures == 0 && errors == 0 && secs < 120.0,
        detail: format!("100 fits, {failures} rising steps, {errors} errors, largest step {worst_rise:.3e}, {secs:.1} s{first_failure}"),
    }
}

fn random_block(rng: &mut ChaCha8Rng, k: usize, scale: f64) -> Vec<f64> {
    (0..k).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn one_hot(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let hot = rng.random_range(0..k);
    (0..k).map(|c| if c == hot { 1.0 } else { 0.0 }).collect()
}

fn softmax(theta: &[f64]) -> Vec<f64> {
    let mut p = theta.to_vec();
    softmax_in_place(&mut p);
    p
}

fn majorizer() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_gap = f64::INFINITY;
    let mut worst_touch = 0.0_f64;
    for _ in 0..10_000 {
        let k = rng.random_range(2..=8);
        let scale = rng.random_range(0.1..5.0);
        let theta = random_block(&mut rng, k, scale);
        let theta0 = random_block(&mut rng, k, scale);
        let g = one_hot(&mut rng, k);
        let pi0 = softmax(&theta0);
        worst_gap = worst_gap.min(majorizer_value(&theta, &theta0, &g, &pi0) - block_deviance(&theta, &g));
        worst_touch = worst_touch.max((majorizer_value(&theta0, &theta0, &g, &pi0) - block_deviance(&theta0, &g)).abs());
    }
    Outcome {
        pass: worst_gap >= -1e-12 && worst_touch <= 1e-12,
        detail: format!("10000 triples, min(h - f) {worst_gap:.3e}, max |h - f| at anchor {worst_touch:.3e}"),
    }
}

fn top_eigenvalue(pi: &[f64]) -> f64 {
    SymmetricEigen::new(hessian_block(pi)).eigenvalues.max()
}

fn hessian_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..10_000 {
        let k = rng.random_range(2..=8);
        let mut pi: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= total);
        worst = worst.max(top_eigenvalue(&pi));
    }
    let at_half = top_eigenvalue(&[0.5, 0.5]);
    Outcome {
        pass: worst <= 0.5 + 1e-12 && (at_half - 0.5).abs() <= 1e-12,
        detail: format!("10000 simplex points, largest eigenvalue {worst:.15}, at (1/2, 1/2) {at_half:.15}"),
    }
}

fn gradient() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let h = 1e-6;
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let k = rng.random_range(2..=8);
        let theta = random_block(&mut rng, k, 1.0);
        let g = one_hot(&mut rng, k);
        let analytic = deviance_gradient_block(&g, &softmax(&theta));
        let mut numeric = vec![0.0; k];
        for c in 0..k {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[c] += h;
            down[c] -= h;
            numeric[c] = (block_deviance(&up, &g) - block_deviance(&down, &g)) / (2.0 * h);
        }
        let err = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let size = analytic.iter().map(|a| a.abs()).fold(0.0, f64::max);
        worst = worst.max(err / size);
    }
    Outcome { pass: worst <= 1e-6, detail: format!("1000 blocks, largest relative error {worst:.3e}") }
}

fn margins(fits: &mut Vec<FitResult>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst_ratio = 0.0_f64;
    let mut unconverged = 0;
    for inst in 0..20 {
        let n = rng.random_range(20..=200);
        let blocks = random_blocks(&mut rng, (2, 8), (2, 5));
        let g = random_table(&mut rng, n, &blocks, 0.0);
        let rank = rng.random_range(1..=blocks.max_rank(n).min(3));
        let lambda = [0.5, 1.0, 2.0, 5.0][inst % 4];
        let r = fit(&g, &FitConfig { epsilon: 1e-10, max_iter: 200_000, ..FitConfig::new(rank, lambda) }).unwrap();
        if !r.converged {
            unconverged += 1;
        }
        let pi = softmax_probs(&linear_predictor(&r.params), g.blocks());
        let gap = (pi.values.row_sum().transpose() - category_margins(&g)).amax();
        worst_ratio = worst_ratio.max(gap / n as f64);
        fits.push(r);
    }
    Outcome {
        pass: worst_ratio <= 1e-3 && unconverged == 0,
        detail: format!("20 fits at eps 1e-10, max |1'Pi - 1'G| / n {worst_ratio:.3e}, {unconverged} unconverged"),
    }
}

fn constraints(fits: &[FitResult]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut checked = 0;
    let mut worst = 0.0_f64;
    let mut all: Vec<&FitResult> = fits.iter().collect();
    let mut extra = Vec::new();
    for inst in 0..30 {
        let n = rng.random_range(10..=150);
        let blocks = random_blocks(&mut rng, (2, 8), (2, 5));
        let g = random_table(&mut rng, n, &blocks, if inst % 2 == 0 { 0.0 } else { 0.1 });
        let rank = rng.random_range(0..=blocks.max_rank(n).min(4));
        let lambda = [0.1, 1.0, 3.0][inst % 3];
        extra.push(fit(&g, &FitConfig { max_iter: 20_000, ..FitConfig::new(rank, lambda) }).unwrap());
    }
    all.extend(extra.iter());
    for r in all.iter().filter(|r| r.converged) {
        checked += 1;
        worst = worst.max(r.params.constraint_violation());
    }
    Outcome {
        pass: worst <= 1e-6 && checked >= 20,
        detail: format!("{checked} converged fits, largest violation {worst:.3e}"),
    }
}

fn mca_baseline() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst_rec = 0.0_f64;
    let mut worst_block = 0.0_f64;
    let mut worst_grand = 0.0_f64;
    for _ in 0..20 {
        let n = rng.random_range(20..=150);
        let blocks = random_blocks(&mut rng, (2, 6), (2, 5));
        let g = random_table(&mut rng, n, &blocks, 0.0);
        if category_margins(&g).iter().any(|&c| c == 0.0) {
            continue;
        }
        let full = fit_mca(&g, blocks.max_rank(n)).unwrap();
        worst_rec = worst_rec.max((row_center(g.values()) - &full.x * full.a.transpose()).amax());
        let (block_dev, grand_dev) = row_sum_check(&g, &reconstruct(&full));
        worst_block = worst_block.max(block_dev);
        worst_grand = worst_grand.max(grand_dev);
        let low = fit_mca(&g, 1.min(blocks.max_rank(n))).unwrap();
        let (b, gr) = row_sum_check(&g, &reconstruct(&low));
        worst_block = worst_block.max(b);
        worst_grand = worst_grand.max(gr);
    }
    Outcome {
        pass: worst_rec <= 1e-8 && worst_block <= 1e-8 && worst_grand <= 1e-8,
        detail: format!(
            "20 tables, |JG - XA'| {worst_rec:.3e}, block sums of G_hat = 1 to {worst_block:.3e}, row sums = J to {worst_grand:.3e}"
        ),
    }
}

/// Logistic IRT deviance with `logit P(y_ij = 1) = alpha_j theta_i - beta_j`.
fn irt_deviance(y: &[Option<bool>], n: usize, alpha: &[f64], beta: &[f64], theta: &[f64]) -> f64 {
    let j = alpha.len();
    let mut total = 0.0;
    for i in 0..n {
        for v in 0..j {
            if let Some(yes) = y[i * j + v] {
                let eta = alpha[v] * theta[i] - beta[v];
                // -log sigmoid(+-eta), computed stably.
                let z = if yes { -eta } else { eta };
                total += if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            }
        }
    }
    total
}

fn irt_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst = 0.0_f64;
    for _ in 0..10 {
        let n = rng.random_range(50..=200);
        let j = rng.random_range(3..=10);
        let blocks = BlockStructure::new(vec![2; j]).unwrap();
        let g = random_table(&mut rng, n, &blocks, 0.0);
        let r = fit(&g, &FitConfig::new(1, 0.0)).unwrap();
        let p = &r.params;
        let pi = softmax_probs(&linear_predictor(p), g.blocks());
        let mmca = deviance(&g, &pi);
        let root_n = (n as f64).sqrt();
        let beta: Vec<f64> = (0..j).map(|v| -2.0 * p.mu[2 * v + 1]).collect();
        let alpha: Vec<f64> = (0..j).map(|v| 2.0 * p.d[0] * p.v[(2 * v + 1, 0)] / root_n).collect();
        let theta: Vec<f64> = (0..n).map(|i| root_n * p.u[(i, 0)]).collect();
        let y: Vec<Option<bool>> =
            (0..n).flat_map(|i| (0..j).map(move |v| (i, v))).map(|(i, v)| g.category(i, v).map(|k| k == 1)).collect();
        worst = worst.max((mmca - irt_deviance(&y, n, &alpha, &beta, &theta)).abs());
    }
    Outcome { pass: worst <= 1e-8, detail: format!("10 binary tables, largest deviance gap {worst:.3e}") }
}

/// Histogram of the QUT rank over `trials` tables with the planted singular values `d`.
fn qut_ranks(blocks: &BlockStructure, d: &[f64], trials: usize, base: u64) -> Vec<usize> {
    let n = 200;
    let mu = vec![0.0; blocks.total()];
    let mut hist = vec![0; blocks.max_rank(n) + 1];
    for t in 0..trials {
        let seed = derive_seed(base, t as u64);
        let planted = PlantedInteraction::new(n, blocks, d, derive_seed(seed, 0)).unwrap();
        let g = simulate_multinomial(&mu, &planted.interaction(), blocks, derive_seed(seed, 1)).unwrap();
        let qut = qut_lambda(&g, &QutConfig { replicates: 500, ..QutConfig::new(derive_seed(seed, 2)) }).unwrap();
        hist[qut.estimated_rank] += 1;
    }
    hist
}

fn histogram(hist: &[usize]) -> String {
    let parts: Vec<String> = hist.iter().enumerate().filter(|(_, &c)| c > 0).map(|(r, c)| format!("{r}:{c}")).collect();
    parts.join(" ")
}

fn rank_recovery() -> Outcome {
    let start = Instant::now();
    let trials = 50;
    let zero = qut_ranks(&BlockStructure::new(vec![3; 4]).unwrap(), &[], trials, 9000);
    let two = qut_ranks(&BlockStructure::new(vec![3; 10]).unwrap(), &[30.0, 20.0], trials, 9100);
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: zero[0] * 100 >= 90 * trials && two[2] * 100 >= 80 * trials && secs < 600.0,
        detail: format!(
            "rank 0 recovered {}/{trials} (need 45; ranks {}), rank 2 recovered {}/{trials} (need 40; ranks {}), {secs:.1} s",
            zero[0],
            histogram(&zero),
            two[2],
            histogram(&two)
        ),
    }
}

fn cv_sanity() -> Outcome {
    let trials = 20;
    let n = 200;
    let blocks = BlockStructure::new(vec![3; 10]).unwrap();
    let mu = vec![0.0; blocks.total()];
    let mut good = 0;
    let mut interior = 0;
    for t in 0..trials {
        let seed = derive_seed(10_000, t as u64);
        let planted = PlantedInteraction::new(n, &blocks, &[30.0, 20.0], derive_seed(seed, 0)).unwrap();
        let g = simulate_multinomial(&mu, &planted.interaction(), &blocks, derive_seed(seed, 1)).unwrap();
        let qut = qut_lambda(&g, &QutConfig { replicates: 500, ..QutConfig::new(derive_seed(seed, 2)) }).unwrap();
        let grid = lambda_grid(0.0, qut.lambda_qut, 10, false).unwrap();
        let cv = cross_validate(&g, 2, &grid, &CvConfig::new(5, derive_seed(seed, 3))).unwrap();
        let curve = &cv.mean_heldout_deviance;
        let star = curve[cv.lambda_grid.iter().position(|&l| l == cv.lambda_star).unwrap()];
        if star <= curve[0] && star <= curve[curve.len() - 1] {
            good += 1;
        }
        if cv.has_interior_minimum() {
            interior += 1;
        }
    }
    Outcome {
        pass: good * 100 >= 80 * trials,
        detail: format!("{good}/{trials} trials with CV(lambda*) <= both endpoints, {interior}/{trials} interior minima"),
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_mmca");
    let data = dir.path().join("data.csv");
    let status = Command::new(bin)
        .args(["simulate", "-n", "120", "--categories", "3,3,3,3,3,3", "--singular-values", "15,10", "--seed", "11"])
        .arg("-o")
        .arg(&data)
        .env_remove("MMCA_SEED")
        .status()
        .unwrap();
    if !status.success() {
        return Outcome { pass: false, detail: "simulate failed".into() };
    }
    let mut outputs = Vec::new();
    for threads in ["1", "3", "1"] {
        let out = dir.path().join(format!("select-{}-{threads}.json", outputs.len()));
        let status = Command::new(bin)
            .args(["select", "--replicates", "200", "--folds", "3", "--grid-count", "5", "--seed", "7", "--threads", threads])
            .arg("-i")
            .arg(&data)
            .arg("-o")
            .arg(&out)
            .env_remove("MMCA_SEED")
            .output()
            .unwrap();
        if !status.status.success() {
            return Outcome { pass: false, detail: format!("select --threads {threads} failed") };
        }
        outputs.push(std::fs::read(&out).unwrap());
    }
    let same = outputs.windows(2).all(|w| w[0] == w[1]);
    Outcome {
        pass: same,
        detail: format!("select JSON with --threads 1, 3, 1: {}", if same { "byte-identical" } else { "differs" }),
    }
}

type Check = Box<dyn FnOnce(&mut Vec<FitResult>) -> Outcome>;

fn main() {
    // Accept and ignore libtest flags so the target runs under `cargo test`.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |id: usize| filter.is_empty() || filter.iter().any(|f| f == &id.to_string());
    let mut fits = Vec::new();
    let mut results = Vec::new();
    let start = Instant::now();
    let checks: Vec<(usize, &str, Check)> = vec![
        (1, "DESCENT", Box::new(|_| descent())),
        (2, "MAJORIZER", Box::new(|_| majorizer())),
        (3, "HESSIAN BOUND", Box::new(|_| hessian_bound())),
        (4, "GRADIENT", Box::new(|_| gradient())),
        (5, "MARGIN MATCHING", Box::new(margins)),
        (6, "CONSTRAINTS", Box::new(|f| constraints(f))),
        (7, "MCA BASELINE", Box::new(|_| mca_baseline())),
        (8, "IRT EQUIVALENCE", Box::new(|_| irt_equivalence())),
        (9, "RANK RECOVERY", Box::new(|_| rank_recovery())),
        (10, "CV SANITY", Box::new(|_| cv_sanity())),
        (11, "DETERMINISM", Box::new(|_| determinism())),
    ];
    for (id, name, check) in checks {
        if wanted(id) {
            results.push(report(id, name, || check(&mut fits)));
        }
    }
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed in {:.1} s", results.len(), start.elapsed().as_secs_f64());
    if passed != results.len() {
        std::process::exit(1);
    }
}

