//! Closed-form theory: sub-Gaussian variance parameters, error bounds, budget
//! formulas, minimax lower bounds, and density-evolution recursions, plus a
//! tree-sampled Monte Carlo oracle for the message distribution.
//!
//! Notation: `lhat = l - 1`, `rhat = r - 1`, `q = E[(2p-1)^2]`,
//! `mu = E[2p-1]`. The product `rho = q^2 * lhat * rhat` controls a phase
//! transition: above `rho = 1` iterated message passing beats majority voting
//! and the effective variance
//!
//! ```text
//! sigma_k^2 = 2q / (mu^2 rho^(k-1))
//!           + (3 + 1/(q rhat)) * (1 - rho^-(k-1)) / (1 - 1/rho)
//! ```
//!
//! converges geometrically (ratio `1/rho`) to
//! `sigma_inf^2 = (3 + 1/(q rhat)) * rho / (rho - 1)`, giving the error bound
//! `exp(-l q / (2 sigma_k^2)) + 3 l r ((l-1)(r-1))^(2k-2) / m` after `k`
//! rounds on `m` tasks. Below the transition one round is best.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::workers::WorkerModel;

/// Parameter point for the closed-form evaluators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryParams {
    pub l: usize,
    pub r: usize,
    pub q: f64,
    pub mu: f64,
}

impl TheoryParams {
    pub fn new(l: usize, r: usize, q: f64, mu: f64) -> Result<Self> {
        if l == 0 || r == 0 {
            return Err(Error::InvalidInput("l and r must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::InvalidInput(format!("q must lie in [0,1], got {q}")));
        }
        if mu * mu > q + 1e-12 {
            return Err(Error::InvalidInput(format!(
                "mu^2 = {} must not exceed q = {q}",
                mu * mu
            )));
        }
        Ok(TheoryParams { l, r, q, mu })
    }

    pub fn lhat(&self) -> f64 {
        (self.l - 1) as f64
    }

    pub fn rhat(&self) -> f64 {
        (self.r - 1) as f64
    }

    /// `q^2 (l-1)(r-1)`, the phase-transition control parameter.
    pub fn phase_ratio(&self) -> f64 {
        self.q * self.q * self.lhat() * self.rhat()
    }

    /// `phase_ratio - 1`; positive above the transition.
    pub fn phase_margin(&self) -> f64 {
        self.phase_ratio() - 1.0
    }
}

fn require_above_threshold(p: &TheoryParams, what: &str) -> Result<f64> {
    let rho = p.phase_ratio();
    if rho <= 1.0 {
        return Err(Error::BelowThreshold(format!(
            "{what} requires q^2(l-1)(r-1) > 1, got {rho}"
        )));
    }
    Ok(rho)
}

/// Effective sub-Gaussian variance after `k` rounds. At `k = 1` the geometric
/// sum is empty and this is exactly `2q / mu^2`. Rejects the singular point
/// `q^2 (l-1)(r-1) = 1`, where the closed form degenerates.
pub fn sigma_k_sq(p: &TheoryParams, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    if p.mu <= 0.0 || p.q <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "sigma_k^2 needs mu > 0 and q > 0, got mu={}, q={}",
            p.mu, p.q
        )));
    }
    if k == 1 {
        return Ok(2.0 * p.q / (p.mu * p.mu));
    }
    if p.l < 2 || p.r < 2 {
        return Err(Error::InvalidInput(
            "k >= 2 requires l >= 2 and r >= 2".into(),
        ));
    }
    let rho = p.phase_ratio();
    if (rho - 1.0).abs() < 1e-12 {
        return Err(Error::InvalidInput(
            "sigma_k^2 is singular at q^2(l-1)(r-1) = 1".into(),
        ));
    }
    let inv = 1.0 / rho;
    let geom = (1.0 - inv.powi(k as i32 - 1)) / (1.0 - inv);
    Ok(2.0 * p.q / (p.mu * p.mu * rho.powi(k as i32 - 1)) + (3.0 + 1.0 / (p.q * p.rhat())) * geom)
}

/// Limit of `sigma_k^2`; only exists above the phase transition.
pub fn sigma_inf_sq(p: &TheoryParams) -> Result<f64> {
    if p.q <= 0.0 || p.l < 2 || p.r < 2 {
        return Err(Error::InvalidInput(
            "sigma_inf^2 needs q > 0, l >= 2, r >= 2".into(),
        ));
    }
    let rho = require_above_threshold(p, "sigma_inf^2")?;
    Ok((3.0 + 1.0 / (p.q * p.rhat())) * rho / (rho - 1.0))
}

/// The two-term error bound for `k` rounds of message passing on `m` tasks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBound {
    /// `exp(-l q / (2 sigma_k^2))`: the density-evolution term.
    pub density_term: f64,
    /// `3 l r ((l-1)(r-1))^(2k-2) / m`: probability the local neighborhood is
    /// not a tree. Dominates at desk scale, vanishes as `1/m`.
    pub tree_term: f64,
    pub total: f64,
    /// Whether `mu > 0` and `q^2(l-1)(r-1) > 1` actually hold. The bound is
    /// still evaluated when only the phase condition fails.
    pub hypotheses_hold: bool,
    /// A probability bound above one proves nothing; it is reported raw.
    pub vacuous: bool,
}

/// Evaluates the error bound for the iterative algorithm. Fails only where
/// the formula itself is undefined (`mu <= 0` or the singular phase point);
/// a merely-violated phase hypothesis is flagged instead.
pub fn iterative_error_bound(p: &TheoryParams, m: usize, k: usize) -> Result<ErrorBound> {
    if m == 0 {
        return Err(Error::InvalidInput("m must be at least 1".into()));
    }
    let sigma = sigma_k_sq(p, k)?;
    let density_term = (-(p.l as f64) * p.q / (2.0 * sigma)).exp();
    let tree_term = local_tree_failure_bound(p.l, p.r, k, m);
    let total = density_term + tree_term;
    Ok(ErrorBound {
        density_term,
        tree_term,
        total,
        hypotheses_hold: p.mu > 0.0 && p.phase_margin() > 0.0,
        vacuous: total > 1.0,
    })
}

/// `((l-1)(r-1))^(2k-2) * 3 l r / m`: upper bound on the probability that a
/// random task's radius-`(2k-1)` neighborhood is not a tree.
pub fn local_tree_failure_bound(l: usize, r: usize, k: usize, m: usize) -> f64 {
    let lhat_rhat = ((l - 1) * (r - 1)) as f64;
    lhat_rhat.powi(2 * k as i32 - 2) * 3.0 * (l * r) as f64 / m as f64
}

/// Iterations and task count beyond which the bound settles at
/// `2 exp(-l q / (4 sigma_inf^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergencePoint {
    /// `ceil(1 + log(q/mu^2) / log(q^2(l-1)(r-1)))`, at least 1.
    pub k0: usize,
    /// `3 l r exp(l q / (4 sigma_inf^2)) ((l-1)(r-1))^(2(k0-1))`. Usually
    /// astronomically larger than any desk-scale experiment.
    pub m0: f64,
}

pub fn convergence_point(p: &TheoryParams) -> Result<ConvergencePoint> {
    if p.mu <= 0.0 {
        return Err(Error::InvalidInput("convergence point needs mu > 0".into()));
    }
    let rho = require_above_threshold(p, "convergence point")?;
    let raw = 1.0 + (p.q / (p.mu * p.mu)).ln() / rho.ln();
    let k0 = (raw.ceil() as usize).max(1);
    let sigma_inf = sigma_inf_sq(p)?;
    let m0 = 3.0
        * (p.l * p.r) as f64
        * ((p.l as f64) * p.q / (4.0 * sigma_inf)).exp()
        * (p.lhat() * p.rhat()).powi(2 * (k0 as i32 - 1));
    Ok(ConvergencePoint { k0, m0 })
}

/// Sufficient per-task query counts for a target error `eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SufficientBudget {
    /// `(32/q) log(2/eps)`, valid whenever `r >= 1 + 1/q`.
    pub large_r: f64,
    /// `(24 + 8/((r-1)q)) (1/q) log(2/eps)`, valid for any `r >= 2`
    /// (infinite at `r = 1`, where worker quality cannot be learned at all).
    pub any_r: f64,
    /// Whether the given `r` satisfies `r >= 1 + 1/q`.
    pub large_r_applies: bool,
    /// The figure that applies to the given `r`.
    pub recommended: f64,
}

pub fn sufficient_budget(q: f64, eps: f64, r: usize) -> Result<SufficientBudget> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidInput(format!("q must lie in (0,1], got {q}")));
    }
    if !(eps > 0.0 && eps <= 0.5) {
        return Err(Error::InvalidInput(format!(
            "eps must lie in (0, 1/2], got {eps}"
        )));
    }
    if r == 0 {
        return Err(Error::InvalidInput("r must be at least 1".into()));
    }
    let log_term = (2.0 / eps).ln();
    let large_r = 32.0 / q * log_term;
    let any_r = if r >= 2 {
        (24.0 + 8.0 / ((r - 1) as f64 * q)) / q * log_term
    } else {
        f64::INFINITY
    };
    let large_r_applies = r as f64 >= 1.0 + 1.0 / q;
    let recommended = if large_r_applies { large_r } else { any_r };
    Ok(SufficientBudget {
        large_r,
        any_r,
        large_r_applies,
        recommended,
    })
}

/// A bound together with its validity flag; out-of-range inputs produce a
/// value anyway, flagged rather than clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlaggedBound {
    pub value: f64,
    pub valid: bool,
    pub note: &'static str,
}

/// Minimax lower bounds on error and on the necessary budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowerBounds {
    /// `(1/2) exp(-(q + q^2) l)`: oracle estimator, non-adaptive allocation;
    /// valid for `q <= 2/3`.
    pub oracle_nonadaptive: FlaggedBound,
    /// `exp(-(l q^2 + 1))`: majority voting, with the existential constant
    /// set to 1 (the exponent shape is the claim, not the constant).
    pub majority: FlaggedBound,
    /// `(1/2) exp(-l q / 0.27)`: any adaptive scheme; valid for `q <= 0.64`.
    pub adaptive_minimax: FlaggedBound,
    /// `(1/(2q)) log(1/(2 eps))` queries per task are necessary
    /// non-adaptively.
    pub necessary_budget_nonadaptive: f64,
    /// `(0.27/q) log(1/(2 eps))` queries per task are necessary even
    /// adaptively.
    pub necessary_budget_adaptive: f64,
}

pub fn minimax_lower_bounds(q: f64, l: usize, eps: f64) -> Result<LowerBounds> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidInput(format!("q must lie in (0,1], got {q}")));
    }
    if !(eps > 0.0 && eps <= 0.5) {
        return Err(Error::InvalidInput(format!(
            "eps must lie in (0, 1/2], got {eps}"
        )));
    }
    let lf = l as f64;
    let (oracle, majority, adaptive) = if l == 0 {
        // No queries: every estimator is a coin flip.
        (0.5, 0.5, 0.5)
    } else {
        (
            0.5 * (-(q + q * q) * lf).exp(),
            (-(lf * q * q + 1.0)).exp(),
            0.5 * (-lf * q / 0.27).exp(),
        )
    };
    let log_term = (1.0 / (2.0 * eps)).ln();
    Ok(LowerBounds {
        oracle_nonadaptive: FlaggedBound {
            value: oracle,
            valid: q <= 2.0 / 3.0,
            note: "valid for q <= 2/3",
        },
        majority: FlaggedBound {
            value: majority,
            valid: q < 1.0,
            note: "existential constant set to 1; exponent shape only",
        },
        adaptive_minimax: FlaggedBound {
            value: adaptive,
            valid: q <= 0.64,
            note: "valid for q <= 0.64",
        },
        necessary_budget_nonadaptive: log_term / (2.0 * q),
        necessary_budget_adaptive: 0.27 / q * log_term,
    })
}

/// `exp(-l mu^2 / 4)`: error bound after a single round (essentially majority
/// voting with Gaussian edge weights). Holds for any `l`, `r`, `m`.
pub fn one_step_error_bound(mu: f64, l: usize) -> Result<f64> {
    if mu < 0.0 {
        return Err(Error::InvalidInput(format!(
            "mu must be non-negative, got {mu}"
        )));
    }
    Ok((-(l as f64) * mu * mu / 4.0).exp())
}

/// Mean and variance of the message and decision distributions after `k`
/// rounds, from the exact moment recursion
///
/// ```text
/// mean_{k+1} = lhat rhat q mean_k
/// var_{k+1}  = lhat rhat var_k + lhat rhat mean_k^2 (1-q)(1 + rhat q)
/// ```
///
/// seeded by `mean_1 = mu lhat` and `var_1 = lhat (2 - mu^2)` for `N(1,1)`
/// initial worker messages: each first-round term `z * y0` has second moment
/// `E[y0^2] = 2` and mean `mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeMoments {
    pub message_mean: f64,
    pub message_var: f64,
    /// Decision sums run over `l` branches rather than `l - 1`.
    pub decision_mean: f64,
    pub decision_var: f64,
    /// `Var / E^2` of the decision variable; Chebyshev bounds the error
    /// probability by this ratio.
    pub chebyshev_ratio: f64,
}

pub fn de_moments(p: &TheoryParams, k: usize) -> Result<DeMoments> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    if p.l < 2 {
        return Err(Error::InvalidInput(
            "moment recursion needs l >= 2 (with l = 1 the message sums are empty)".into(),
        ));
    }
    let (lhat, rhat, q) = (p.lhat(), p.rhat(), p.q);
    let mut mean = p.mu * lhat;
    let mut var = lhat * (2.0 - p.mu * p.mu);
    for _ in 1..k {
        let prev = mean;
        var = lhat * rhat * var + lhat * rhat * prev * prev * (1.0 - q) * (1.0 + rhat * q);
        mean = lhat * rhat * q * prev;
    }
    let scale = p.l as f64 / lhat;
    let decision_mean = scale * mean;
    let decision_var = scale * var;
    let chebyshev_ratio = if decision_mean == 0.0 {
        f64::INFINITY
    } else {
        decision_var / (decision_mean * decision_mean)
    };
    Ok(DeMoments {
        message_mean: mean,
        message_var: var,
        decision_mean,
        decision_var,
        chebyshev_ratio,
    })
}

/// Streaming summary of sampled decision variables: central moments up to
/// order four (for standard errors of the variance) and the non-positive
/// fraction.
#[derive(Debug, Clone, Copy)]
pub struct DeMcSummary {
    pub samples: usize,
    pub mean: f64,
    pub variance: f64,
    /// Empirical `P(decision <= 0)`: the event "wrong or tied on a +1 task".
    pub p_nonpositive: f64,
    /// Fourth central moment (population form).
    pub fourth_central: f64,
}

impl DeMcSummary {
    pub fn mean_se(&self) -> f64 {
        (self.variance / self.samples as f64).sqrt()
    }

    /// Standard error of the sample variance via the delta method.
    pub fn variance_se(&self) -> f64 {
        ((self.fourth_central - self.variance * self.variance).max(0.0) / self.samples as f64)
            .sqrt()
    }

    pub fn p_nonpositive_se(&self) -> f64 {
        (self.p_nonpositive * (1.0 - self.p_nonpositive) / self.samples as f64).sqrt()
    }
}

#[derive(Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
    nonpositive: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        // One-observation merge (Pébay's update).
        let n1 = self.n;
        let n = n1 + 1.0;
        let delta = x - self.mean;
        let delta_n = delta / n;
        let term1 = delta * delta_n * n1;
        self.mean += delta_n;
        self.m4 += term1 * delta_n * delta_n * (n * n - 3.0 * n + 3.0)
            + 6.0 * delta_n * delta_n * self.m2
            - 4.0 * delta_n * self.m3;
        self.m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * self.m2;
        self.m2 += term1;
        self.n = n;
        if x <= 0.0 {
            self.nonpositive += 1.0;
        }
    }

    fn merge(a: Moments, b: Moments) -> Moments {
        if a.n == 0.0 {
            return b;
        }
        if b.n == 0.0 {
            return a;
        }
        let n = a.n + b.n;
        let delta = b.mean - a.mean;
        let delta2 = delta * delta;
        let mean = a.mean + delta * b.n / n;
        let m2 = a.m2 + b.m2 + delta2 * a.n * b.n / n;
        let m3 = a.m3
            + b.m3
            + delta * delta2 * a.n * b.n * (a.n - b.n) / (n * n)
            + 3.0 * delta * (a.n * b.m2 - b.n * a.m2) / n;
        let m4 = a.m4
            + b.m4
            + delta2 * delta2 * a.n * b.n * (a.n * a.n - a.n * b.n + b.n * b.n) / (n * n * n)
            + 6.0 * delta2 * (a.n * a.n * b.m2 + b.n * b.n * a.m2) / (n * n)
            + 4.0 * delta * (a.n * b.m3 - b.n * a.m3) / n;
        Moments {
            n,
            mean,
            m2,
            m3,
            m4,
            nonpositive: a.nonpositive + b.nonpositive,
        }
    }
}

/// Samples the decision variable of round `k` directly on the infinite
/// `(l, r)`-regular tree: every sample grows a fresh depth-`(2k-1)`
/// computation tree with i.i.d. workers and `N(1,1)` leaves, so no assignment
/// graph (and no tree-failure event) is involved. This is the brute-force
/// oracle for the density-evolution analysis.
///
/// Samples are partitioned into deterministic chunks with seeds drawn from
/// the caller's source, then evaluated in parallel and merged by streaming
/// moment combination, so results do not depend on thread scheduling.
pub fn de_monte_carlo<R: Rng + ?Sized>(
    l: usize,
    r: usize,
    model: &WorkerModel,
    k: usize,
    samples: usize,
    rng: &mut R,
) -> Result<DeMcSummary> {
    if l == 0 || r == 0 || k == 0 {
        return Err(Error::InvalidInput("l, r, k must be at least 1".into()));
    }
    if samples < 1000 {
        return Err(Error::InvalidInput(format!(
            "need at least 1000 samples for a stable summary, got {samples}"
        )));
    }
    model.validate()?;
    let per_sample = (l as f64) * (((l - 1) * (r - 1)) as f64).powi(k as i32 - 1);
    if per_sample > 1e8 {
        return Err(Error::InvalidInput(format!(
            "tree of {per_sample:.3e} nodes per sample is too deep; reduce k"
        )));
    }
    let chunks = 256.min(samples);
    let seeds: Vec<u64> = (0..chunks).map(|_| rng.random()).collect();
    let base = samples / chunks;
    let extra = samples % chunks;
    let per_chunk: Vec<Moments> = seeds
        .into_par_iter()
        .enumerate()
        .map(|(c, seed)| {
            let mut local = ChaCha8Rng::seed_from_u64(seed);
            let count = base + usize::from(c < extra);
            let normal = Normal::new(1.0, 1.0).expect("valid normal");
            let mut acc = Moments::default();
            for _ in 0..count {
                acc.push(sample_decision(l, r, model, k, &normal, &mut local));
            }
            acc
        })
        .collect();
    // Merge in chunk order: a scheduling-dependent reduction tree would
    // reassociate the float sums and leak the thread count into the result.
    let merged = per_chunk
        .into_iter()
        .fold(Moments::default(), Moments::merge);
    Ok(DeMcSummary {
        samples,
        mean: merged.mean,
        variance: merged.m2 / merged.n,
        p_nonpositive: merged.nonpositive / merged.n,
        fourth_central: merged.m4 / merged.n,
    })
}

fn signed_response<R: Rng + ?Sized>(p: f64, rng: &mut R) -> f64 {
    if rng.random::<f64>() < p {
        1.0
    } else {
        -1.0
    }
}

/// Decision variable: `l` independent branches, each a worker response times
/// that worker's message from the previous round.
fn sample_decision<R: Rng + ?Sized>(
    l: usize,
    r: usize,
    model: &WorkerModel,
    k: usize,
    normal: &Normal<f64>,
    rng: &mut R,
) -> f64 {
    let mut total = 0.0;
    for _ in 0..l {
        let p = model.sample_reliability(rng);
        total +=
            signed_response(p, rng) * sample_worker_message(p, l, r, model, k - 1, normal, rng);
    }
    total
}

/// Worker message of round `j`, conditioned on that worker's reliability:
/// `r - 1` branches through fresh tasks, or a `N(1,1)` leaf at round zero.
fn sample_worker_message<R: Rng + ?Sized>(
    p: f64,
    l: usize,
    r: usize,
    model: &WorkerModel,
    j: usize,
    normal: &Normal<f64>,
    rng: &mut R,
) -> f64 {
    if j == 0 {
        return normal.sample(rng);
    }
    let mut total = 0.0;
    for _ in 0..r - 1 {
        total += signed_response(p, rng) * sample_task_message(l, r, model, j, normal, rng);
    }
    total
}

/// Task message of round `j`: `l - 1` branches through fresh workers, each
/// contributing its response times its round-`(j-1)` message.
fn sample_task_message<R: Rng + ?Sized>(
    l: usize,
    r: usize,
    model: &WorkerModel,
    j: usize,
    normal: &Normal<f64>,
    rng: &mut R,
) -> f64 {
    let mut total = 0.0;
    for _ in 0..l - 1 {
        let p = model.sample_reliability(rng);
        total +=
            signed_response(p, rng) * sample_worker_message(p, l, r, model, j - 1, normal, rng);
    }
    total
}

/// `m l^2 2^(-sqrt(m)) + exp(-(2/l)(l q - 2)^2 sqrt(m))`: error bound for the
/// adaptive grouping scheme under the spammer-hammer crowd, valid for
/// `l > 2/q`. The first term covers a spammer pair agreeing on a whole group,
/// the second covers running out of budget.
pub fn adaptive_grouping_error_bound(m: usize, l: usize, q: f64) -> f64 {
    let sqrt_m = (m as f64).sqrt();
    let lf = l as f64;
    (m as f64) * lf * lf * 2f64.powf(-sqrt_m)
        + (-(2.0 / lf) * (lf * q - 2.0) * (lf * q - 2.0) * sqrt_m).exp()
}

/// Everything the theory engine can say about one parameter point. Fields are
/// `None` where the corresponding closed form does not apply (below the phase
/// transition, or no `m` supplied).
#[derive(Debug, Clone)]
pub struct TheoryReport {
    pub params: TheoryParams,
    pub m: Option<usize>,
    /// Iteration count used for `sigma_k_sq` and the error bound: the caller's
    /// `k`, else `k0`, else 1.
    pub k: usize,
    pub eps: f64,
    pub phase_margin: f64,
    pub sigma_k_sq: Option<f64>,
    pub sigma_inf_sq: Option<f64>,
    pub k0: Option<usize>,
    pub m0: Option<f64>,
    pub error_bound: Option<ErrorBound>,
    pub one_step_bound: f64,
    pub budget: SufficientBudget,
    pub lower_bounds: LowerBounds,
    pub de_moments: Option<DeMoments>,
}

pub fn theory_report(
    params: &TheoryParams,
    m: Option<usize>,
    k: Option<usize>,
    eps: f64,
) -> Result<TheoryReport> {
    let convergence = convergence_point(params).ok();
    let k_used = k.or(convergence.as_ref().map(|c| c.k0)).unwrap_or(1);
    let sigma_k = sigma_k_sq(params, k_used).ok();
    let sigma_inf = sigma_inf_sq(params).ok();
    let error_bound = m.and_then(|m| iterative_error_bound(params, m, k_used).ok());
    let budget = sufficient_budget(params.q, eps, params.r)?;
    let lower_bounds = minimax_lower_bounds(params.q, params.l, eps)?;
    let one_step = one_step_error_bound(params.mu.max(0.0), params.l)?;
    let de = de_moments(params, k_used).ok();
    Ok(TheoryReport {
        params: *params,
        m,
        k: k_used,
        eps,
        phase_margin: params.phase_margin(),
        sigma_k_sq: sigma_k,
        sigma_inf_sq: sigma_inf,
        k0: convergence.as_ref().map(|c| c.k0),
        m0: convergence.as_ref().map(|c| c.m0),
        error_bound,
        one_step_bound: one_step,
        budget,
        lower_bounds,
        de_moments: de,
    })
}

impl std::fmt::Display for TheoryReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fn opt(v: Option<f64>) -> String {
            v.map_or_else(
                || "n/a (below phase transition)".into(),
                |x| format!("{x:.6}"),
            )
        }
        writeln!(f, "l                        = {}", self.params.l)?;
        writeln!(f, "r                        = {}", self.params.r)?;
        writeln!(f, "q                        = {}", self.params.q)?;
        writeln!(f, "mu                       = {}", self.params.mu)?;
        if let Some(m) = self.m {
            writeln!(f, "m                        = {m}")?;
        }
        writeln!(f, "k                        = {}", self.k)?;
        writeln!(f, "eps                      = {}", self.eps)?;
        writeln!(f, "phase_margin             = {:.6}", self.phase_margin)?;
        writeln!(f, "sigma_k_sq               = {}", opt(self.sigma_k_sq))?;
        writeln!(f, "sigma_inf_sq             = {}", opt(self.sigma_inf_sq))?;
        writeln!(
            f,
            "k0                       = {}",
            self.k0
                .map_or_else(|| "n/a (below phase transition)".into(), |k| k.to_string())
        )?;
        writeln!(f, "m0                       = {}", opt(self.m0))?;
        match &self.error_bound {
            Some(b) => {
                let flag = if b.vacuous { " (vacuous)" } else { "" };
                let hyp = if b.hypotheses_hold {
                    ""
                } else {
                    " [hypotheses violated]"
                };
                writeln!(f, "error_bound_density      = {:.6}", b.density_term)?;
                writeln!(f, "error_bound_tree         = {:.6}", b.tree_term)?;
                writeln!(f, "error_bound_total        = {:.6}{flag}{hyp}", b.total)?;
            }
            None => writeln!(f, "error_bound_total        = n/a (supply m, mu > 0)")?,
        }
        writeln!(f, "one_step_error_bound     = {:.6}", self.one_step_bound)?;
        writeln!(f, "budget_large_r           = {:.3}", self.budget.large_r)?;
        writeln!(f, "budget_any_r             = {:.3}", self.budget.any_r)?;
        writeln!(
            f,
            "budget_recommended       = {:.3} ({})",
            self.budget.recommended,
            if self.budget.large_r_applies {
                "r >= 1 + 1/q"
            } else {
                "small-r regime"
            }
        )?;
        let lb = &self.lower_bounds;
        let flag = |b: &FlaggedBound| {
            if b.valid {
                String::new()
            } else {
                format!(" [outside validity: {}]", b.note)
            }
        };
        writeln!(
            f,
            "lower_oracle_nonadaptive = {:.6e}{}",
            lb.oracle_nonadaptive.value,
            flag(&lb.oracle_nonadaptive)
        )?;
        writeln!(
            f,
            "lower_majority           = {:.6e} [{}]",
            lb.majority.value, lb.majority.note
        )?;
        writeln!(
            f,
            "lower_adaptive_minimax   = {:.6e}{}",
            lb.adaptive_minimax.value,
            flag(&lb.adaptive_minimax)
        )?;
        writeln!(
            f,
            "necessary_budget_nonadaptive = {:.3}",
            lb.necessary_budget_nonadaptive
        )?;
        writeln!(
            f,
            "necessary_budget_adaptive    = {:.3}",
            lb.necessary_budget_adaptive
        )?;
        if let Some(de) = &self.de_moments {
            writeln!(f, "de_decision_mean         = {:.6e}", de.decision_mean)?;
            writeln!(f, "de_decision_var          = {:.6e}", de.decision_var)?;
            writeln!(f, "de_chebyshev_ratio       = {:.6e}", de.chebyshev_ratio)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn params(l: usize, r: usize, q: f64, mu: f64) -> TheoryParams {
        TheoryParams::new(l, r, q, mu).unwrap()
    }

    /// Independent route to sigma_k^2: the raw sub-Gaussian recursion
    /// m_{k+1} = q lhat rhat m_k,
    /// s_{k+1} = (3 q lhat rhat^2 + lhat rhat) m_k^2 + lhat rhat s_k,
    /// with m_1 = mu lhat, s_1 = 2 lhat, and sigma_k^2 = q lhat s_k / m_k^2.
    fn sigma_k_sq_by_recursion(p: &TheoryParams, k: usize) -> f64 {
        let (lhat, rhat, q) = (p.lhat(), p.rhat(), p.q);
        let mut m = p.mu * lhat;
        let mut s = 2.0 * lhat;
        for _ in 1..k {
            let next_s = (3.0 * q * lhat * rhat * rhat + lhat * rhat) * m * m + lhat * rhat * s;
            m *= q * lhat * rhat;
            s = next_s;
        }
        q * lhat * s / (m * m)
    }

    #[test]
    fn sigma_k_matches_quoted_value() {
        let p = params(5, 5, 0.3, 0.3);
        let s2 = sigma_k_sq(&p, 2).unwrap();
        assert!((s2 - 8.463).abs() < 1e-3, "sigma_2^2 = {s2}");
    }

    #[test]
    fn sigma_1_is_two_q_over_mu_sq() {
        let p = params(7, 9, 0.4, 0.35);
        assert!((sigma_k_sq(&p, 1).unwrap() - 2.0 * 0.4 / (0.35 * 0.35)).abs() < 1e-12);
    }

    #[test]
    fn sigma_k_matches_independent_recursion() {
        for &(l, r, q, mu) in &[
            (5usize, 5usize, 0.3, 0.3),
            (30, 30, 0.3, 0.3),
            (10, 4, 0.5, 0.4),
            (4, 10, 0.7, 0.6),
        ] {
            let p = params(l, r, q, mu);
            for k in 1..=8 {
                let closed = sigma_k_sq(&p, k).unwrap();
                let recursed = sigma_k_sq_by_recursion(&p, k);
                assert!(
                    ((closed - recursed) / recursed).abs() < 1e-9,
                    "(l={l},r={r},q={q},mu={mu},k={k}): {closed} vs {recursed}"
                );
            }
        }
    }

    #[test]
    fn sigma_k_singular_point_rejected() {
        // q^2 (l-1)(r-1) = 0.25 * 4 = 1 exactly.
        let p = params(3, 3, 0.5, 0.5);
        assert!(sigma_k_sq(&p, 2).is_err());
        assert!(sigma_k_sq(&p, 1).is_ok());
    }

    #[test]
    fn sigma_k_converges_geometrically_to_limit() {
        let p = params(30, 30, 0.3, 0.3);
        let limit = sigma_inf_sq(&p).unwrap();
        assert!((limit - 3.157).abs() < 1e-3, "sigma_inf^2 = {limit}");
        let rho = p.phase_ratio();
        let mut prev_gap = (sigma_k_sq(&p, 1).unwrap() - limit).abs();
        for k in 2..=20 {
            let gap = (sigma_k_sq(&p, k).unwrap() - limit).abs();
            if prev_gap < 1e-9 {
                break; // below f64 resolution the ratio is noise
            }
            assert!(gap < prev_gap, "gap grew at k={k}");
            let ratio = gap / prev_gap;
            assert!((ratio - 1.0 / rho).abs() < 1e-6, "ratio {ratio} at k={k}");
            prev_gap = gap;
        }
    }

    #[test]
    fn sigma_inf_limiting_algebra() {
        // q = 1 and huge r: (3 + 1/rhat) rho/(rho-1) -> 3.
        let p = params(2, 1_000_001, 1.0, 1.0);
        assert!((sigma_inf_sq(&p).unwrap() - 3.0).abs() < 1e-4);
    }

    #[test]
    fn sigma_inf_below_threshold_rejected() {
        let p = params(3, 3, 0.3, 0.3); // rho = 0.36
        assert!(matches!(sigma_inf_sq(&p), Err(Error::BelowThreshold(_))));
    }

    #[test]
    fn error_bound_example_terms() {
        let p = params(5, 5, 0.3, 0.3);
        let b = iterative_error_bound(&p, 1000, 2).unwrap();
        assert!(
            (b.density_term - 0.915).abs() < 1e-3,
            "density {}",
            b.density_term
        );
        assert!((b.tree_term - 19.2).abs() < 1e-12, "tree {}", b.tree_term);
        assert!(b.vacuous);
        assert!(b.hypotheses_hold); // rho = 1.44 > 1
    }

    #[test]
    fn tree_term_at_k1() {
        let p = params(5, 5, 0.3, 0.3);
        let b = iterative_error_bound(&p, 1000, 1).unwrap();
        assert!((b.tree_term - 3.0 * 25.0 / 1000.0).abs() < 1e-15);
    }

    #[test]
    fn error_bound_tends_to_density_term() {
        let p = params(5, 5, 0.3, 0.3);
        let b = iterative_error_bound(&p, usize::MAX, 2).unwrap();
        assert!((b.total - b.density_term).abs() < 1e-12);
    }

    #[test]
    fn convergence_point_example() {
        let p = params(30, 30, 0.3, 0.3);
        let c = convergence_point(&p).unwrap();
        assert_eq!(c.k0, 2);
        assert!((c.m0 / 3.9e9 - 1.0).abs() < 0.01, "m0 = {:.3e}", c.m0);
    }

    #[test]
    fn convergence_point_best_case_mu() {
        let p = params(30, 30, 0.3, 0.3f64.sqrt());
        assert_eq!(convergence_point(&p).unwrap().k0, 1);
    }

    #[test]
    fn sufficient_budget_examples() {
        let b = sufficient_budget(0.3, 0.05, 10).unwrap();
        assert!(b.large_r_applies); // 10 >= 1 + 1/0.3
        assert_eq!(b.large_r.ceil() as usize, 394);
        // Boundary eps = 1/2.
        let b = sufficient_budget(0.3, 0.5, 10).unwrap();
        assert!((b.large_r - 32.0 / 0.3 * 4f64.ln()).abs() < 1e-9);
        assert!(sufficient_budget(0.3, 0.6, 10).is_err());
        // Small r pays more.
        let b = sufficient_budget(0.3, 0.05, 2).unwrap();
        assert!(!b.large_r_applies);
        assert!(b.any_r > b.large_r);
        assert_eq!(b.recommended, b.any_r);
    }

    #[test]
    fn lower_bound_examples() {
        let lb = minimax_lower_bounds(0.3, 10, 0.05).unwrap();
        assert!((lb.oracle_nonadaptive.value - 0.0101).abs() < 1e-4);
        assert!(lb.oracle_nonadaptive.valid);
        assert!((lb.necessary_budget_nonadaptive - 3.8376).abs() < 1e-3);
        let zero = minimax_lower_bounds(0.3, 0, 0.05).unwrap();
        assert_eq!(zero.oracle_nonadaptive.value, 0.5);
        assert_eq!(zero.majority.value, 0.5);
        assert_eq!(zero.adaptive_minimax.value, 0.5);
        // Validity flags.
        let lb = minimax_lower_bounds(0.7, 10, 0.05).unwrap();
        assert!(!lb.oracle_nonadaptive.valid);
        assert!(!lb.adaptive_minimax.valid);
    }

    #[test]
    fn one_step_bound_examples() {
        assert!((one_step_error_bound(0.3, 15).unwrap() - 0.714).abs() < 1e-3);
        assert_eq!(one_step_error_bound(0.0, 7).unwrap(), 1.0);
        assert!((one_step_error_bound(1.0, 16).unwrap() - (-4.0f64).exp()).abs() < 1e-12);
        assert!(one_step_error_bound(-0.1, 5).is_err());
    }

    #[test]
    fn de_moments_first_round() {
        let p = params(5, 5, 0.3, 0.3);
        let de = de_moments(&p, 1).unwrap();
        assert!((de.message_mean - 1.2).abs() < 1e-12);
        assert!((de.message_var - 4.0 * (2.0 - 0.09)).abs() < 1e-12);
        assert!((de.decision_mean - 1.5).abs() < 1e-12);
        assert!((de.decision_var - 1.25 * 4.0 * (2.0 - 0.09)).abs() < 1e-12);
    }

    #[test]
    fn de_moments_match_unrolled_closed_form() {
        // var_k = var_1 a^(k-1) + b c^(k-2) sum_{t=0}^{k-2} (a/c)^t,
        // a = lhat rhat, b = mu^2 lhat^3 rhat (1-q)(1 + rhat q), c = (lhat rhat q)^2.
        let p = params(5, 4, 0.4, 0.35);
        let (lhat, rhat, q, mu) = (p.lhat(), p.rhat(), p.q, p.mu);
        let a = lhat * rhat;
        let b = mu * mu * lhat.powi(3) * rhat * (1.0 - q) * (1.0 + rhat * q);
        let c = (lhat * rhat * q).powi(2);
        for k in 2..=7 {
            let mut tail = 0.0;
            for t in 0..=(k - 2) {
                tail += (a / c).powi(t as i32);
            }
            let closed =
                lhat * (2.0 - mu * mu) * a.powi(k as i32 - 1) + b * c.powi(k as i32 - 2) * tail;
            let de = de_moments(&p, k).unwrap();
            assert!(
                ((de.message_var - closed) / closed).abs() < 1e-12,
                "k={k}: {} vs {closed}",
                de.message_var
            );
            let mean_closed = mu * lhat * (lhat * rhat * q).powi(k as i32 - 1);
            assert!(((de.message_mean - mean_closed) / mean_closed).abs() < 1e-12);
        }
    }

    #[test]
    fn de_moments_trichotomy() {
        // Above threshold: Var/E^2 of the decision variable converges.
        let above = params(5, 5, 0.5, 0.5);
        let r20 = de_moments(&above, 20).unwrap().chebyshev_ratio;
        let r21 = de_moments(&above, 21).unwrap().chebyshev_ratio;
        assert!((r21 - r20).abs() / r20 < 1e-2);
        // Below threshold: grows exponentially, here by factor 1/rho per round.
        let below = params(3, 3, 0.3, 0.3);
        let rho = below.phase_ratio();
        let b10 = de_moments(&below, 10).unwrap().chebyshev_ratio;
        let b11 = de_moments(&below, 11).unwrap().chebyshev_ratio;
        assert!(b11 > b10);
        assert!(
            (b11 / b10 - 1.0 / rho).abs() / (1.0 / rho) < 0.05,
            "growth {}",
            b11 / b10
        );
        // At threshold: linear growth, equal increments.
        let critical = params(3, 3, 0.5, 0.5);
        assert!((critical.phase_margin()).abs() < 1e-12);
        let c10 = de_moments(&critical, 10).unwrap().chebyshev_ratio;
        let c11 = de_moments(&critical, 11).unwrap().chebyshev_ratio;
        let c12 = de_moments(&critical, 12).unwrap().chebyshev_ratio;
        let d1 = c11 - c10;
        let d2 = c12 - c11;
        assert!(
            d1 > 0.0 && ((d2 - d1) / d1).abs() < 0.05,
            "increments {d1} vs {d2}"
        );
    }

    #[test]
    fn perfect_crowd_snr_improves_every_round() {
        // q = mu = 1: Var/E^2 of the decision variable strictly decreases in k.
        let p = params(5, 5, 1.0, 1.0);
        let mut prev = f64::INFINITY;
        for k in 1..=12 {
            let ratio = de_moments(&p, k).unwrap().chebyshev_ratio;
            assert!(ratio < prev, "ratio {ratio} did not decrease at k={k}");
            prev = ratio;
        }
    }

    #[test]
    fn de_moments_rejects_degenerate_l() {
        assert!(de_moments(&params(1, 5, 0.3, 0.3), 1).is_err());
    }

    #[test]
    fn perfect_crowd_first_round_is_gaussian_sum() {
        // FixedP(1), k = 1: the decision is a sum of l N(1,1) draws.
        let model = WorkerModel::fixed_p(1.0).unwrap();
        let s = de_monte_carlo(5, 5, &model, 1, 100_000, &mut rng(1)).unwrap();
        assert!((s.mean - 5.0).abs() < 4.0 * s.mean_se(), "mean {}", s.mean);
        assert!(
            (s.variance - 5.0).abs() < 4.0 * s.variance_se(),
            "var {}",
            s.variance
        );
    }

    #[test]
    fn monte_carlo_guards() {
        let model = WorkerModel::fixed_p(1.0).unwrap();
        assert!(de_monte_carlo(5, 5, &model, 1, 10, &mut rng(2)).is_err());
        // 10 * 81^8 nodes per sample is far past the guard.
        assert!(de_monte_carlo(10, 10, &model, 9, 1000, &mut rng(3)).is_err());
    }

    #[test]
    fn monte_carlo_deterministic_given_seed() {
        let model = WorkerModel::spammer_hammer(0.3).unwrap();
        let a = de_monte_carlo(3, 3, &model, 2, 2000, &mut rng(4)).unwrap();
        let b = de_monte_carlo(3, 3, &model, 2, 2000, &mut rng(4)).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.variance, b.variance);
        assert_eq!(a.p_nonpositive, b.p_nonpositive);
    }

    #[test]
    fn adaptive_grouping_bound_value() {
        let b = adaptive_grouping_error_bound(400, 6, 0.5);
        assert!((b - 0.0150).abs() < 1e-4, "bound {b}");
    }

    #[test]
    fn bound_evaluators_monotone() {
        // Density term decreasing in l at fixed k.
        let mut prev = f64::INFINITY;
        for l in [5, 10, 20, 40] {
            let p = params(l, 15, 0.3, 0.3);
            let b = iterative_error_bound(&p, 1_000_000, 3).unwrap();
            assert!(b.density_term < prev);
            prev = b.density_term;
        }
        // Oracle lower bound decreasing in l.
        let mut prev = f64::INFINITY;
        for l in [0, 5, 10, 20] {
            let v = minimax_lower_bounds(0.3, l, 0.05)
                .unwrap()
                .oracle_nonadaptive
                .value;
            assert!(v < prev);
            prev = v;
        }
        // Sufficient budget decreasing in q.
        let mut prev = f64::INFINITY;
        for q in [0.1, 0.3, 0.5, 0.9] {
            let v = sufficient_budget(q, 0.05, 100).unwrap().recommended;
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn report_prints_key_fields() {
        let p = params(30, 30, 0.3, 0.3);
        let report = theory_report(&p, Some(1000), None, 0.05).unwrap();
        let text = report.to_string();
        assert!(text.contains("sigma_inf_sq             = 3.156"), "{text}");
        assert!(text.contains("k0                       = 2"), "{text}");
    }
}
