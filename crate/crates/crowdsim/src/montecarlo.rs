//! Experiment harness: seeded trials over parameter grids, per-algorithm
//! error rates with standard errors, and the exponential-decay regression.
//!
//! Reproducibility contract: a trial is a pure function of its seed, and the
//! per-trial seed is a hash of `(base_seed, cell index, trial index)`, so any
//! cell can be re-run in isolation and trials can execute in parallel without
//! changing results. Aggregation walks trials in index order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::allocation::{build_configuration_graph, GroundTruth};
use crate::error::{Error, Result};
use crate::inference::{
    default_k_max, em_infer, iterative_infer, majority_vote, oracle_ml, spectral_infer, EmOptions,
};
use crate::theory::{sigma_inf_sq, TheoryParams};
use crate::workers::{sample_responses, sample_workers, WorkerModel};

/// The estimators the harness can run on a shared dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Iterative,
    Majority,
    Em,
    Spectral,
    Oracle,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Iterative,
        Algorithm::Majority,
        Algorithm::Em,
        Algorithm::Spectral,
        Algorithm::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Iterative => "iterative",
            Algorithm::Majority => "majority",
            Algorithm::Em => "em",
            Algorithm::Spectral => "spectral",
            Algorithm::Oracle => "oracle",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "iterative" => Ok(Algorithm::Iterative),
            "majority" => Ok(Algorithm::Majority),
            "em" => Ok(Algorithm::Em),
            "spectral" => Ok(Algorithm::Spectral),
            "oracle" => Ok(Algorithm::Oracle),
            other => Err(Error::InvalidInput(format!(
                "unknown algorithm '{other}' (expected iterative|majority|em|spectral|oracle)"
            ))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How the worker degree is derived from the task degree at each sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RPolicy {
    Fixed(usize),
    EqualL,
    /// `r = max(1, round(ratio * l))`, e.g. `ratio = 50/28` in the color
    /// comparison setup.
    RatioL(f64),
}

impl RPolicy {
    pub fn derive(&self, l: usize) -> usize {
        match *self {
            RPolicy::Fixed(r) => r,
            RPolicy::EqualL => l,
            RPolicy::RatioL(ratio) => ((ratio * l as f64).round() as usize).max(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruthMode {
    UniformRandom,
    AllOnes,
}

/// Iteration budget for the message-passing estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KPolicy {
    Fixed(usize),
    /// Use the closed-form `k0` for the configured crowd (1 below threshold).
    Auto,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub m: usize,
    pub l_values: Vec<usize>,
    pub r_policy: RPolicy,
    pub model: WorkerModel,
    pub truth_mode: TruthMode,
    pub algorithms: Vec<Algorithm>,
    pub k_policy: KPolicy,
    pub power_iters: usize,
    pub trials: usize,
    pub base_seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.m == 0 {
            return Err(Error::InvalidInput("m must be at least 1".into()));
        }
        if self.l_values.is_empty() {
            return Err(Error::InvalidInput(
                "sweep needs at least one l value".into(),
            ));
        }
        if self.algorithms.is_empty() {
            return Err(Error::InvalidInput("select at least one algorithm".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidInput("trials must be at least 1".into()));
        }
        if self.power_iters == 0 {
            return Err(Error::InvalidInput("power_iters must be at least 1".into()));
        }
        Ok(())
    }

    fn k_for(&self, l: usize, r: usize) -> Result<usize> {
        match self.k_policy {
            KPolicy::Fixed(k) => Ok(k),
            KPolicy::Auto => Ok(default_k_max(l, r, &self.model.crowd_stats()?)),
        }
    }
}

/// SplitMix64-style mixing of `(base_seed, cell, trial)` into one seed.
pub fn mix_seed(base: u64, cell: u64, trial: u64) -> u64 {
    let mut z =
        base ^ cell.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ trial.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One seeded trial: one graph, one truth, one worker sample, one response
/// matrix, and every requested algorithm run on that identical data. Returns
/// the per-algorithm fraction of wrong estimates.
pub fn run_trial(
    config: &ExperimentConfig,
    l: usize,
    r: usize,
    seed: u64,
) -> Result<Vec<(Algorithm, f64)>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graph = build_configuration_graph(config.m, l, r, &mut rng)?;
    let truth = match config.truth_mode {
        TruthMode::UniformRandom => GroundTruth::sample_uniform(config.m, &mut rng),
        TruthMode::AllOnes => GroundTruth::all_ones(config.m),
    };
    let workers = sample_workers(&config.model, graph.n(), &mut rng)?;
    let responses = sample_responses(&graph, &truth, &workers, &mut rng)?;
    let k = config.k_for(l, r)?;

    let mut out = Vec::with_capacity(config.algorithms.len());
    for &algorithm in &config.algorithms {
        // Every algorithm gets its own stream so that adding or removing one
        // never perturbs the others.
        let mut algo_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xA160, algorithm as u64));
        let result = match algorithm {
            Algorithm::Iterative => iterative_infer(&graph, &responses, k, &mut algo_rng)?,
            Algorithm::Majority => majority_vote(&graph, &responses, &mut algo_rng)?,
            Algorithm::Em => em_infer(&graph, &responses, &EmOptions::default(), &mut algo_rng)?,
            Algorithm::Spectral => {
                spectral_infer(&graph, &responses, config.power_iters, &mut algo_rng)?
            }
            Algorithm::Oracle => oracle_ml(&graph, &responses, &workers, &mut algo_rng)?,
        };
        out.push((algorithm, truth.error_fraction(&result.estimates)));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub l: usize,
    pub r: usize,
    pub m: usize,
    pub algorithm: Algorithm,
    pub mean_error: f64,
    pub std_error: f64,
    pub trials: usize,
}

#[derive(Debug, Clone)]
pub struct CellFailure {
    pub l: usize,
    pub r: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<CellFailure>,
}

impl SweepResult {
    pub fn row(&self, l: usize, algorithm: Algorithm) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.l == l && r.algorithm == algorithm)
    }

    /// CSV rendering with the stable header
    /// `l,r,m,algorithm,mean_error,std_error,trials`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("l,r,m,algorithm,mean_error,std_error,trials\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                row.l, row.r, row.m, row.algorithm, row.mean_error, row.std_error, row.trials
            ));
        }
        out
    }
}

/// Runs the full grid `l_values x trials`. Trials execute in parallel with
/// per-trial seeds `mix_seed(base_seed, cell, trial)`; a failing cell is
/// recorded and skipped while the rest of the sweep continues.
pub fn sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    config.validate()?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (cell, &l) in config.l_values.iter().enumerate() {
        let r = config.r_policy.derive(l);
        let trial_results: Vec<Result<Vec<(Algorithm, f64)>>> = (0..config.trials)
            .into_par_iter()
            .map(|trial| {
                run_trial(
                    config,
                    l,
                    r,
                    mix_seed(config.base_seed, cell as u64, trial as u64),
                )
            })
            .collect();
        let mut per_trial = Vec::with_capacity(config.trials);
        let mut failed = None;
        for result in trial_results {
            match result {
                Ok(errors) => per_trial.push(errors),
                Err(e) => {
                    failed = Some(e.to_string());
                    break;
                }
            }
        }
        if let Some(message) = failed {
            failures.push(CellFailure { l, r, message });
            continue;
        }
        for (idx, &algorithm) in config.algorithms.iter().enumerate() {
            let errors: Vec<f64> = per_trial.iter().map(|t| t[idx].1).collect();
            let trials = errors.len();
            let mean = errors.iter().sum::<f64>() / trials as f64;
            let std_error = if trials > 1 {
                let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>()
                    / (trials - 1) as f64;
                (var / trials as f64).sqrt()
            } else {
                0.0
            };
            rows.push(SweepRow {
                l,
                r,
                m: config.m,
                algorithm,
                mean_error: mean,
                std_error,
                trials,
            });
        }
    }
    Ok(SweepResult { rows, failures })
}

/// Ordinary least squares for `y ~ intercept + slope * x`.
pub fn fit_line(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 points to fit a line, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput(
            "degenerate fit: all x values equal".into(),
        ));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let slope = sxy / sxx;
    Ok((slope, mean_y - slope * mean_x))
}

/// Least-squares fit of `log(error)` against `l` for one algorithm.
#[derive(Debug, Clone, Copy)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub points_used: usize,
    /// Cells dropped because their mean error was exactly zero (log
    /// undefined); flagged rather than silently imputed.
    pub excluded_zero_cells: usize,
    /// `-q / (2 sigma_inf^2)` at the largest fitted `l`: the steep edge of
    /// the predicted envelope.
    pub theory_slope_fast: f64,
    /// `-q / (4 sigma_inf^2)` at the largest fitted `l`.
    pub theory_slope_slow: f64,
}

/// Fits the exponential decay of one algorithm's error over the sweep points
/// above the phase transition with `l >= min_l`. Needs at least four usable
/// points.
pub fn exponential_decay_check(
    result: &SweepResult,
    q: f64,
    algorithm: Algorithm,
    min_l: usize,
) -> Result<DecayFit> {
    let mut excluded = 0usize;
    let mut points = Vec::new();
    let mut max_cell: Option<(usize, usize)> = None;
    for row in result
        .rows
        .iter()
        .filter(|r| r.algorithm == algorithm && r.l >= min_l)
    {
        if row.l < 2 || row.r < 2 {
            continue;
        }
        let margin = q * q * ((row.l - 1) * (row.r - 1)) as f64 - 1.0;
        if margin <= 0.0 {
            continue;
        }
        if row.mean_error == 0.0 {
            excluded += 1;
            continue;
        }
        points.push((row.l as f64, row.mean_error.ln()));
        if max_cell.is_none_or(|(l, _)| row.l > l) {
            max_cell = Some((row.l, row.r));
        }
    }
    if points.len() < 4 {
        return Err(Error::InvalidInput(format!(
            "need at least 4 sweep points above threshold with positive error, got {}",
            points.len()
        )));
    }
    let (slope, intercept) = fit_line(&points)?;
    let (l_max, r_max) = max_cell.expect("nonempty points");
    let sigma_inf = sigma_inf_sq(&TheoryParams::new(l_max, r_max, q, q)?)?;
    Ok(DecayFit {
        slope,
        intercept,
        points_used: points.len(),
        excluded_zero_cells: excluded,
        theory_slope_fast: -q / (2.0 * sigma_inf),
        theory_slope_slow: -q / (4.0 * sigma_inf),
    })
}
