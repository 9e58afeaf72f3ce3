//! Sparse ARD weight learning and cross-validated aggregation of selections.
//!
//! The objective per regularisation level `lambda` is
//!
//! ```text
//! F(a) = -log(max(ratio(a), 1e-12)) + lambda * sum_d |a_d|
//! ```
//!
//! minimised by proximal gradient descent with a nonnegativity projection.
//! Every `(lambda, fold)` run votes for the dimensions whose final weight
//! survives the cutoff; runs that fail to reach a positive ratio on their
//! held-out fold do not vote. By default a rejected run still counts in the
//! stability denominator, i.e. it votes for the empty set.

use std::collections::BTreeMap;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{fmt_f64, parse_list, parse_value, KvMap};
use crate::error::{Error, Result};
use crate::kernel::{bandwidth_heuristic, ArdKernelParams, BandwidthMode};
use crate::mmd::{estimate_from_sums, ratio_statistic, require_rows, GramSums, Grams, MmdEstimate};

/// Floor applied to the ratio inside the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

const MAX_HALVINGS: usize = 40;
/// Upper bound on the trial step, as a multiple of the configured step.
const MAX_STEP_GROWTH: f64 = 1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// Every weight starts at 1.
    #[default]
    Ones,
    /// Weights start in `[0.5, ...)`, growing with the standardised mean
    /// difference of each dimension; their mean is 1.
    HeuristicScaled,
}

impl FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ones" => Ok(InitStrategy::Ones),
            "heuristic_scaled" => Ok(InitStrategy::HeuristicScaled),
            other => Err(Error::InvalidConfig(format!("unknown init strategy `{other}`"))),
        }
    }
}

impl std::fmt::Display for InitStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitStrategy::Ones => "ones",
            InitStrategy::HeuristicScaled => "heuristic_scaled",
        })
    }
}

/// Denominator of the per-dimension selection frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StabilityBase {
    /// Every `(lambda, fold)` run; rejected runs select nothing.
    #[default]
    AllRuns,
    /// Only runs with a positive validation ratio.
    Accepted,
}

impl FromStr for StabilityBase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all_runs" => Ok(StabilityBase::AllRuns),
            "accepted" => Ok(StabilityBase::Accepted),
            other => Err(Error::InvalidConfig(format!("unknown stability base `{other}`"))),
        }
    }
}

impl std::fmt::Display for StabilityBase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StabilityBase::AllRuns => "all_runs",
            StabilityBase::Accepted => "accepted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lambda_grid: Vec<f64>,
    pub max_iters: usize,
    pub step_size: f64,
    pub tolerance: f64,
    pub init: InitStrategy,
    pub seed: u64,
    pub cv_folds: usize,
    pub selection_threshold: f64,
    pub weight_cutoff: f64,
    pub bandwidth_mode: BandwidthMode,
    pub stability_base: StabilityBase,
}

/// `count` values log-spaced over `[lo, hi]`.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..count)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
        .collect()
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lambda_grid: log_spaced(1e-3, 1e1, 8),
            max_iters: 200,
            step_size: 0.05,
            tolerance: 1e-6,
            init: InitStrategy::Ones,
            seed: 0,
            cv_folds: 5,
            selection_threshold: 0.5,
            weight_cutoff: 1e-3,
            bandwidth_mode: BandwidthMode::Median,
            stability_base: StabilityBase::AllRuns,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.lambda_grid.is_empty() {
            return bad("lambda_grid is empty");
        }
        if self.lambda_grid.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return bad("lambda_grid values must be finite and positive");
        }
        if self.lambda_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("lambda_grid must be strictly ascending");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return bad("step_size must be positive");
        }
        if !(self.tolerance.is_finite() && self.tolerance >= 0.0) {
            return bad("tolerance must be nonnegative");
        }
        if self.cv_folds < 2 {
            return bad("cv_folds must be at least 2");
        }
        if !(self.selection_threshold > 0.0 && self.selection_threshold <= 1.0) {
            return bad("selection_threshold must lie in (0, 1]");
        }
        if !(self.weight_cutoff.is_finite() && self.weight_cutoff > 0.0) {
            return bad("weight_cutoff must be positive");
        }
        Ok(())
    }

    /// Reads keys under `prefix` (e.g. `"optimizer."`); missing keys keep
    /// their defaults, unknown keys are rejected.
    pub fn from_kv(map: &KvMap, prefix: &str) -> Result<Self> {
        let mut cfg = OptimizerConfig::default();
        for (key, value) in map.iter().filter_map(|(k, v)| k.strip_prefix(prefix).map(|k| (k, v))) {
            match key {
                "lambda_grid" => cfg.lambda_grid = parse_list(key, value)?,
                "max_iters" => cfg.max_iters = parse_value(key, value)?,
                "step_size" => cfg.step_size = parse_value(key, value)?,
                "tolerance" => cfg.tolerance = parse_value(key, value)?,
                "init" => cfg.init = value.parse()?,
                "seed" => cfg.seed = parse_value(key, value)?,
                "cv_folds" => cfg.cv_folds = parse_value(key, value)?,
                "selection_threshold" => cfg.selection_threshold = parse_value(key, value)?,
                "weight_cutoff" => cfg.weight_cutoff = parse_value(key, value)?,
                "bandwidth_mode" => cfg.bandwidth_mode = value.parse()?,
                "stability_base" => cfg.stability_base = value.parse()?,
                other => return Err(Error::InvalidConfig(format!("unknown optimizer key `{prefix}{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self, prefix: &str) -> KvMap {
        let grid = self.lambda_grid.iter().map(|l| fmt_f64(*l)).collect::<Vec<_>>().join(", ");
        [
            ("lambda_grid", grid),
            ("max_iters", self.max_iters.to_string()),
            ("step_size", fmt_f64(self.step_size)),
            ("tolerance", fmt_f64(self.tolerance)),
            ("init", self.init.to_string()),
            ("seed", self.seed.to_string()),
            ("cv_folds", self.cv_folds.to_string()),
            ("selection_threshold", fmt_f64(self.selection_threshold)),
            ("weight_cutoff", fmt_f64(self.weight_cutoff)),
            ("bandwidth_mode", self.bandwidth_mode.to_string()),
            ("stability_base", self.stability_base.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (format!("{prefix}{k}"), v))
        .collect()
    }
}

/// Soft-thresholding followed by projection onto `a >= 0`.
#[inline]
pub fn soft_threshold_nonneg(w: f64, step: f64, lambda: f64) -> f64 {
    (w.abs() - step * lambda).max(0.0).copysign(w).max(0.0)
}

/// One evaluation of the ratio objective at a weight vector.
struct Evaluation {
    weights: Array1<f64>,
    grams: Grams,
    sums: GramSums,
    estimate: MmdEstimate,
    smooth: f64,
}

/// Two samples with their bandwidths, ready for repeated evaluation.
struct Problem<'a> {
    x: ArrayView2<'a, f64>,
    y: ArrayView2<'a, f64>,
    bandwidths: ArrayView1<'a, f64>,
}

impl<'a> Problem<'a> {
    fn new(x: ArrayView2<'a, f64>, y: ArrayView2<'a, f64>, bandwidths: ArrayView1<'a, f64>) -> Result<Self> {
        require_rows(x.nrows(), y.nrows(), 4)?;
        for found in [x.ncols(), y.ncols()] {
            if found != bandwidths.len() {
                return Err(Error::DimensionMismatch { expected: bandwidths.len(), found });
            }
        }
        Ok(Problem { x, y, bandwidths })
    }

    fn evaluate(&self, weights: &Array1<f64>) -> Result<Evaluation> {
        let params = ArdKernelParams::new(weights.clone(), self.bandwidths.to_owned())?;
        let grams = Grams::compute(self.x, self.y, &params);
        let sums = grams.sums();
        let estimate = estimate_from_sums(&sums);
        let smooth = -estimate.ratio.max(LOG_FLOOR).ln();
        Ok(Evaluation { weights: weights.clone(), grams, sums, estimate, smooth })
    }

    /// Gradient of `-log ratio` with respect to the weights.
    ///
    /// Back-propagates through the statistic to per-entry adjoints of the
    /// Gram matrices, then through `dk/da_d = -2 a_d k (x_d - y_d)^2 / (D gamma_d^2)`.
    /// In packed coordinates `p_d = a_d x_d / (gamma_d sqrt(D))` the last
    /// factor becomes `-2 k (p_d - q_d)^2 / a_d`.
    fn gradient(&self, ev: &Evaluation) -> Result<Array1<f64>> {
        let est = &ev.estimate;
        if !(est.ratio > LOG_FLOOR) {
            return Err(Error::NonFiniteGradient);
        }
        let (n, m) = (ev.sums.n, ev.sums.m);
        let (nf, mf) = (n as f64, m as f64);
        let dim = self.bandwidths.len();
        let d_mmd = -1.0 / est.mmd_sq;
        let d_var = 0.5 / (est.variance + crate::mmd::RATIO_STABILITY_CONSTANT);
        let (fc, gc) = ev.sums.centred_projections();
        let phi: Vec<f64> = fc.iter().map(|v| 8.0 / (nf * nf) * v).collect();
        let psi: Vec<f64> = gc.iter().map(|v| 8.0 / (mf * mf) * v).collect();

        let g = &ev.grams;
        let width = g.active.len();
        let mut acc = vec![0.0; width];
        let accumulate = |acc: &mut [f64], adj: f64, a: &[f64], b: &[f64]| {
            for ((o, u), v) in acc.iter_mut().zip(a).zip(b) {
                let diff = u - v;
                *o += adj * diff * diff;
            }
        };

        let within_x = 2.0 * d_mmd / (nf * (nf - 1.0));
        for i in 0..n {
            let (xi, krow) = (g.px.row(i), g.kxx.row(i));
            for j in (i + 1)..n {
                let adj = (within_x + d_var * (phi[i] + phi[j]) / (nf - 1.0)) * krow[j];
                accumulate(&mut acc, adj, xi, g.px.row(j));
            }
        }
        let within_y = 2.0 * d_mmd / (mf * (mf - 1.0));
        for i in 0..m {
            let (yi, krow) = (g.py.row(i), g.kyy.row(i));
            for j in (i + 1)..m {
                let adj = (within_y + d_var * (psi[i] + psi[j]) / (mf - 1.0)) * krow[j];
                accumulate(&mut acc, adj, yi, g.py.row(j));
            }
        }
        let cross = -2.0 * d_mmd / (nf * mf);
        for i in 0..n {
            let (xi, krow) = (g.px.row(i), g.kxy.row(i));
            for j in 0..m {
                let adj = (cross - d_var * (phi[i] / mf + psi[j] / nf)) * krow[j];
                accumulate(&mut acc, adj, xi, g.py.row(j));
            }
        }

        let mut grad = Array1::zeros(dim);
        for (k, &d) in g.active.iter().enumerate() {
            grad[d] = -2.0 / ev.weights[d] * acc[k];
        }
        if grad.iter().any(|v: &f64| !v.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        Ok(grad)
    }
}

fn l1(weights: &Array1<f64>) -> f64 {
    weights.iter().map(|w| w.abs()).sum()
}

/// `-log(max(ratio, 1e-12)) + lambda * ||a||_1`.
pub fn objective(
    weights: ArrayView1<f64>,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    bandwidths: ArrayView1<f64>,
    lambda: f64,
) -> Result<f64> {
    let problem = Problem::new(x.view(), y.view(), bandwidths.view())?;
    let weights = weights.to_owned();
    let ev = problem.evaluate(&weights)?;
    Ok(ev.smooth + lambda * l1(&weights))
}

/// Gradient of the smooth part `-log ratio` with respect to the ARD weights.
pub fn gradient(
    weights: ArrayView1<f64>,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    bandwidths: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    let problem = Problem::new(x.view(), y.view(), bandwidths.view())?;
    let ev = problem.evaluate(&weights.to_owned())?;
    problem.gradient(&ev)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    /// Objective change fell below the tolerance.
    Converged,
    /// No backtracking step decreased the objective.
    Stalled,
    /// Every weight reached zero.
    Zeroed,
    /// The ratio was not positive at the starting point.
    DegenerateStart,
    /// Iteration budget exhausted.
    DidNotConverge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub status: RunStatus,
    pub iterations: usize,
    pub objective: f64,
    pub objective_trace: Vec<f64>,
    pub train_ratio: f64,
}

fn initial_weights(problem: &Problem, init: InitStrategy) -> Array1<f64> {
    let dim = problem.bandwidths.len();
    match init {
        InitStrategy::Ones => Array1::ones(dim),
        InitStrategy::HeuristicScaled => {
            let mx = problem.x.mean_axis(Axis(0)).expect("nonempty");
            let my = problem.y.mean_axis(Axis(0)).expect("nonempty");
            let r: Array1<f64> = Array1::from_shape_fn(dim, |d| (mx[d] - my[d]).abs() / problem.bandwidths[d]);
            let mean = r.mean().unwrap_or(0.0);
            if mean > 0.0 && mean.is_finite() {
                r.mapv(|v| 0.5 + 0.5 * v / mean)
            } else {
                Array1::ones(dim)
            }
        }
    }
}

/// Proximal gradient descent on the objective at one `lambda`.
///
/// Each iteration takes a gradient step on the smooth part, soft-thresholds by
/// `step * lambda` and projects onto `a >= 0`; the step is halved until the
/// full objective does not increase. The returned weights are nonnegative.
pub fn optimize_one(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    bandwidths: ArrayView1<f64>,
    lambda: f64,
    config: &OptimizerConfig,
) -> Result<(Array1<f64>, RunDiagnostics)> {
    config.validate()?;
    let problem = Problem::new(x.view(), y.view(), bandwidths.view())?;
    let start = initial_weights(&problem, config.init);
    let mut current = problem.evaluate(&start)?;
    let mut value = current.smooth + lambda * l1(&current.weights);
    let mut trace = vec![value];

    let mut grad = match problem.gradient(&current) {
        Ok(g) => g,
        Err(Error::NonFiniteGradient) => {
            let zeros = Array1::zeros(start.len());
            let diag = RunDiagnostics {
                status: RunStatus::DegenerateStart,
                iterations: 0,
                objective: value,
                objective_trace: trace,
                train_ratio: current.estimate.ratio,
            };
            return Ok((zeros, diag));
        }
        Err(e) => return Err(e),
    };

    let mut status = RunStatus::DidNotConverge;
    let mut iterations = 0;
    let mut trial_step = config.step_size;
    while iterations < config.max_iters {
        iterations += 1;
        let mut step = trial_step;
        let mut accepted = None;
        for halvings in 0..MAX_HALVINGS {
            let candidate = Array1::from_shape_fn(grad.len(), |d| {
                soft_threshold_nonneg(current.weights[d] - step * grad[d], step, lambda)
            });
            let ev = problem.evaluate(&candidate)?;
            let cand_value = ev.smooth + lambda * l1(&candidate);
            if cand_value <= value {
                accepted = Some((ev, cand_value));
                trial_step = if halvings == 0 { (2.0 * step).min(MAX_STEP_GROWTH * config.step_size) } else { step };
                break;
            }
            step *= 0.5;
        }
        let Some((ev, new_value)) = accepted else {
            status = RunStatus::Stalled;
            break;
        };
        let change = value - new_value;
        current = ev;
        value = new_value;
        trace.push(value);
        if current.weights.iter().all(|w| *w == 0.0) {
            status = RunStatus::Zeroed;
            break;
        }
        if change < config.tolerance {
            status = RunStatus::Converged;
            break;
        }
        grad = match problem.gradient(&current) {
            Ok(g) => g,
            Err(Error::NonFiniteGradient) => {
                status = RunStatus::Stalled;
                break;
            }
            Err(e) => return Err(e),
        };
    }

    let diag = RunDiagnostics {
        status,
        iterations,
        objective: value,
        objective_trace: trace,
        train_ratio: current.estimate.ratio,
    };
    Ok((current.weights, diag))
}

/// Outcome of one `(lambda, fold)` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub lambda: f64,
    pub fold: usize,
    pub weights: Vec<f64>,
    pub objective: f64,
    pub validation_ratio: f64,
    /// Whether the run reached a positive validation ratio and so votes.
    pub accepted: bool,
    pub selected: Vec<usize>,
    pub diagnostics: RunDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Sorted dimension indices whose stability reaches the threshold.
    pub selected: Vec<usize>,
    /// Fraction of runs selecting each dimension; see [`StabilityBase`].
    pub stability: Vec<f64>,
    pub bandwidths: Vec<f64>,
    pub degenerate_dims: Vec<usize>,
    pub runs: Vec<RunRecord>,
}

impl SelectionResult {
    pub fn n_accepted(&self) -> usize {
        self.runs.iter().filter(|r| r.accepted).count()
    }

    /// Final weights keyed by `(lambda index, fold)`.
    pub fn per_run_weights(&self, grid: &[f64]) -> BTreeMap<(usize, usize), Vec<f64>> {
        self.runs
            .iter()
            .filter_map(|r| grid.iter().position(|l| *l == r.lambda).map(|li| ((li, r.fold), r.weights.clone())))
            .collect()
    }
}

/// Assigns rows to `k` folds after a seeded shuffle.
fn fold_assignment(rows: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rows).collect();
    order.shuffle(rng);
    let mut fold = vec![0; rows];
    for (pos, row) in order.into_iter().enumerate() {
        fold[row] = pos % k;
    }
    fold
}

fn split_rows(a: ArrayView2<f64>, folds: &[usize], k: usize) -> (ndarray::Array2<f64>, ndarray::Array2<f64>) {
    let train: Vec<usize> = (0..a.nrows()).filter(|&r| folds[r] != k).collect();
    let valid: Vec<usize> = (0..a.nrows()).filter(|&r| folds[r] == k).collect();
    (a.select(Axis(0), &train), a.select(Axis(0), &valid))
}

/// Cross-validated aggregation of sparse selections over the lambda grid.
pub fn select_variables(x: ArrayView2<f64>, y: ArrayView2<f64>, config: &OptimizerConfig) -> Result<SelectionResult> {
    config.validate()?;
    if x.ncols() != y.ncols() {
        return Err(Error::DimensionMismatch { expected: x.ncols(), found: y.ncols() });
    }
    let k = config.cv_folds;
    // Each validation fold needs the four rows the variance estimate requires.
    let required = 4 * k;
    require_rows(x.nrows(), y.nrows(), required)?;

    let bw = bandwidth_heuristic(x, y, config.bandwidth_mode)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let fx = fold_assignment(x.nrows(), k, &mut rng);
    let fy = fold_assignment(y.nrows(), k, &mut rng);
    let folds: Vec<_> = (0..k).map(|f| (split_rows(x, &fx, f), split_rows(y, &fy, f))).collect();

    let jobs: Vec<(f64, usize)> = config
        .lambda_grid
        .iter()
        .flat_map(|&l| (0..k).map(move |f| (l, f)))
        .collect();
    let dim = x.ncols();
    let runs: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(lambda, fold)| -> Result<RunRecord> {
            let ((x_tr, x_va), (y_tr, y_va)) = &folds[fold];
            let (weights, diagnostics) = optimize_one(x_tr.view(), y_tr.view(), bw.values.view(), lambda, config)?;
            let params = ArdKernelParams::new(weights.clone(), bw.values.clone())?;
            let validation_ratio = ratio_statistic(x_va.view(), y_va.view(), &params)?.ratio;
            let selected = (0..dim).filter(|&d| weights[d] > config.weight_cutoff).collect();
            Ok(RunRecord {
                lambda,
                fold,
                weights: weights.to_vec(),
                objective: diagnostics.objective,
                validation_ratio,
                accepted: validation_ratio > 0.0,
                selected,
                diagnostics,
            })
        })
        .collect::<Result<_>>()?;

    let accepted: Vec<&RunRecord> = runs.iter().filter(|r| r.accepted).collect();
    if accepted.is_empty() {
        return Err(Error::AllRunsRejected);
    }
    let mut votes = vec![0usize; dim];
    for r in &accepted {
        for &d in &r.selected {
            votes[d] += 1;
        }
    }
    let base = match config.stability_base {
        StabilityBase::AllRuns => runs.len(),
        StabilityBase::Accepted => accepted.len(),
    };
    let stability: Vec<f64> = votes.iter().map(|&v| v as f64 / base as f64).collect();
    let selected = (0..dim).filter(|&d| stability[d] >= config.selection_threshold).collect();
    Ok(SelectionResult {
        selected,
        stability,
        bandwidths: bw.values.to_vec(),
        degenerate_dims: bw.degenerate,
        runs,
    })
}
