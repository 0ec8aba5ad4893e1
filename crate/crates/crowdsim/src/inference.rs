//! Inference: recovering the true `±1` answers from noisy worker responses.
//!
//! Five estimators share a common interface:
//!
//! * [`iterative_infer`] — message passing on the assignment graph. Task
//!   messages `x_{i->j}` and worker messages `y_{j->i}` live on edges and are
//!   updated synchronously:
//!
//!   ```text
//!   x_{i->j} = sum_{j' in ∂i \ j} A_{ij'} y_{j'->i}
//!   y_{j->i} = sum_{i' in ∂j \ i} A_{i'j} x_{i'->j}
//!   ```
//!
//!   after `k_max` rounds the decision for task `i` is the full-neighborhood
//!   sum `x_i = sum_{j in ∂i} A_{ij} y_{j->i}` using the worker messages of
//!   round `k_max - 1`. Worker messages are initialized i.i.d. `N(1, 1)`.
//!   These are linear updates, so decisions are invariant to positive
//!   rescaling of the initial messages.
//! * [`majority_vote`] — sign of the plain response sum.
//! * [`em_infer`] — one-coin EM: alternate a posterior over task labels with
//!   per-worker reliability estimates.
//! * [`spectral_infer`] — power iteration for the top left singular vector of
//!   the (zero-filled) response matrix; the global sign is fixed by
//!   correlating with the majority decision values.
//! * [`oracle_ml`] — log-odds weighted vote using the true reliabilities;
//!   only available in simulation, where it lower-bounds everyone else.
//!
//! All estimators break exact ties by a fair coin from the caller's seeded
//! random source, so runs are reproducible.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::allocation::AssignmentGraph;
use crate::error::{Error, Result};
use crate::workers::{CrowdStats, WorkerSample};

/// Reliability clamp used wherever a log-odds weight is formed.
const LOG_ODDS_CLAMP: f64 = 1e-6;

/// Sparse `±1` responses; the support must equal the assignment graph's edge
/// set when the two are used together. Absent pairs mean "not asked".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseMatrix {
    m: usize,
    n: usize,
    entries: Vec<(u32, u32, i8)>,
}

impl ResponseMatrix {
    pub fn from_triplets(m: usize, n: usize, entries: Vec<(u32, u32, i8)>) -> Self {
        ResponseMatrix { m, n, entries }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(u32, u32, i8)] {
        &self.entries
    }

    /// Flips every response; used by equivariance tests and sanity checks.
    pub fn negated(&self) -> Self {
        ResponseMatrix {
            m: self.m,
            n: self.n,
            entries: self.entries.iter().map(|&(t, w, a)| (t, w, -a)).collect(),
        }
    }

    /// Lays the entries out per graph edge id, verifying that the support is
    /// exactly the edge set and every value is `±1`. The index reported in
    /// errors is the 0-based entry position.
    pub fn aligned(&self, graph: &AssignmentGraph) -> Result<Vec<i8>> {
        if self.m != graph.m() || self.n != graph.n() {
            return Err(Error::DimensionMismatch(format!(
                "responses are {}x{} but graph is {}x{}",
                self.m,
                self.n,
                graph.m(),
                graph.n()
            )));
        }
        if self.entries.len() != graph.edge_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} responses for {} graph edges",
                self.entries.len(),
                graph.edge_count()
            )));
        }
        for (idx, &(_, _, a)) in self.entries.iter().enumerate() {
            if a != 1 && a != -1 {
                return Err(Error::InvalidInput(format!(
                    "entry {idx}: answer {a} is not ±1"
                )));
            }
        }
        // Fast path: entries already in edge-id order (how sampling emits them).
        let ordered = self.entries.iter().enumerate().all(|(e, &(t, w, _))| {
            t as usize == graph.edge_task(e) && w as usize == graph.edge_worker(e)
        });
        if ordered {
            return Ok(self.entries.iter().map(|&(_, _, a)| a).collect());
        }
        let mut index: HashMap<(u32, u32), u32> = HashMap::with_capacity(graph.edge_count());
        for (e, (t, w)) in graph.edges().enumerate() {
            index.insert((t as u32, w as u32), e as u32);
        }
        let mut values = vec![0i8; graph.edge_count()];
        let mut filled = vec![false; graph.edge_count()];
        for (idx, &(t, w, a)) in self.entries.iter().enumerate() {
            let Some(&e) = index.get(&(t, w)) else {
                return Err(Error::InvalidInput(format!(
                    "entry {idx}: ({t},{w}) is not a graph edge"
                )));
            };
            if filled[e as usize] {
                return Err(Error::InvalidInput(format!(
                    "entry {idx}: duplicate response for ({t},{w})"
                )));
            }
            filled[e as usize] = true;
            values[e as usize] = a;
        }
        Ok(values)
    }
}

/// Output common to all estimators. `estimates[i] = sign(decision_values[i])`
/// with zero decisions resolved by a seeded fair coin.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub estimates: Vec<i8>,
    pub decision_values: Vec<f64>,
    pub worker_scores: Option<Vec<f64>>,
    pub iterations_run: usize,
}

fn sign_with_tie<R: Rng + ?Sized>(value: f64, rng: &mut R) -> i8 {
    if value > 0.0 {
        1
    } else if value < 0.0 {
        -1
    } else if rng.random::<bool>() {
        1
    } else {
        -1
    }
}

fn decide<R: Rng + ?Sized>(decision_values: &[f64], rng: &mut R) -> Vec<i8> {
    decision_values
        .iter()
        .map(|&d| sign_with_tie(d, rng))
        .collect()
}

/// Per-edge message state of the iterative algorithm.
#[derive(Debug, Clone)]
pub struct MessageState {
    /// Task-to-worker messages, one per edge.
    pub x: Vec<f64>,
    /// Worker-to-task messages, one per edge.
    pub y: Vec<f64>,
    /// Completed update rounds.
    pub k: usize,
}

impl MessageState {
    /// Starts from explicit worker messages `y0` (one per edge).
    pub fn with_init(graph: &AssignmentGraph, y0: Vec<f64>) -> Result<Self> {
        if y0.len() != graph.edge_count() {
            return Err(Error::DimensionMismatch(format!(
                "y0 has {} entries for {} edges",
                y0.len(),
                graph.edge_count()
            )));
        }
        Ok(MessageState {
            x: vec![0.0; graph.edge_count()],
            y: y0,
            k: 0,
        })
    }

    /// Standard initialization: `y0 ~ N(1, 1)` i.i.d. per edge.
    pub fn gaussian_init<R: Rng + ?Sized>(graph: &AssignmentGraph, rng: &mut R) -> Self {
        let normal = Normal::new(1.0, 1.0).expect("valid normal");
        let y0 = (0..graph.edge_count())
            .map(|_| normal.sample(rng))
            .collect();
        MessageState {
            x: vec![0.0; graph.edge_count()],
            y: y0,
            k: 0,
        }
    }

    /// `x_{i->j} = sum_{j' in ∂i \ j} A_{ij'} y_{j'->i}`, computed as the full
    /// task sum minus the excluded edge's own term.
    pub fn update_x(&mut self, graph: &AssignmentGraph, a: &[f64]) {
        for i in 0..graph.m() {
            let range = graph.task_edges(i);
            let mut s = 0.0;
            for e in range.clone() {
                s += a[e] * self.y[e];
            }
            for e in range {
                self.x[e] = s - a[e] * self.y[e];
            }
        }
    }

    /// `y_{j->i} = sum_{i' in ∂j \ i} A_{i'j} x_{i'->j}`.
    pub fn update_y(&mut self, graph: &AssignmentGraph, a: &[f64]) {
        for j in 0..graph.n() {
            let edges = graph.worker_edges(j);
            let mut s = 0.0;
            for &e in edges {
                s += a[e as usize] * self.x[e as usize];
            }
            for &e in edges {
                self.y[e as usize] = s - a[e as usize] * self.x[e as usize];
            }
        }
    }

    /// One synchronous round: all `x` from the previous `y`, then all `y`
    /// from the new `x`.
    ///
    /// Message magnitudes grow like `((l-1)(r-1)q)^k`, which stays far inside
    /// f64 range for any sensible iteration count; the assertion documents
    /// the finiteness invariant rather than guarding a realistic overflow.
    pub fn step(&mut self, graph: &AssignmentGraph, a: &[f64]) {
        self.update_x(graph, a);
        self.update_y(graph, a);
        self.k += 1;
        debug_assert!(
            self.y.iter().all(|v| v.is_finite()),
            "messages overflowed at k={}",
            self.k
        );
    }

    /// Full-neighborhood decision values from the current worker messages:
    /// `x_i = sum_{j in ∂i} A_{ij} y_{j->i}`.
    pub fn decision_values(&self, graph: &AssignmentGraph, a: &[f64]) -> Vec<f64> {
        (0..graph.m())
            .map(|i| graph.task_edges(i).map(|e| a[e] * self.y[e]).sum())
            .collect()
    }

    /// Full-neighborhood worker scores from the current task messages:
    /// `y_j = sum_{i in ∂j} A_{ij} x_{i->j}`.
    pub fn worker_scores(&self, graph: &AssignmentGraph, a: &[f64]) -> Vec<f64> {
        (0..graph.n())
            .map(|j| {
                graph
                    .worker_edges(j)
                    .iter()
                    .map(|&e| a[e as usize] * self.x[e as usize])
                    .sum()
            })
            .collect()
    }
}

/// Default iteration count: when `(l-1)(r-1)q^2 > 1` and the crowd moments
/// are known, `ceil(1 + log(q/mu^2) / log((l-1)(r-1)q^2))` rounds suffice for
/// the message distribution to stabilize; below that threshold iterating
/// hurts and a single round (essentially majority voting) is best.
pub fn default_k_max(l: usize, r: usize, stats: &CrowdStats) -> usize {
    if l < 2 || r < 2 || stats.mu <= 0.0 || stats.q <= 0.0 {
        return 1;
    }
    let rho = stats.q * stats.q * ((l - 1) * (r - 1)) as f64;
    if rho <= 1.0 {
        return 1;
    }
    let k0 = 1.0 + (stats.q / (stats.mu * stats.mu)).ln() / rho.ln();
    (k0.ceil() as usize).max(1)
}

/// Message-passing inference with the standard Gaussian initialization.
pub fn iterative_infer<R: Rng + ?Sized>(
    graph: &AssignmentGraph,
    responses: &ResponseMatrix,
    k_max: usize,
    rng: &mut R,
) -> Result<InferenceResult> {
    let a = response_values(graph, responses)?;
    let state = MessageState::gaussian_init(graph, rng);
    run_iterative(graph, &a, state, k_max, rng)
}

/// Message-passing inference from explicit initial worker messages; the
/// random source is only used for tie breaking.
pub fn iterative_infer_with_init<R: Rng + ?Sized>(
    graph: &AssignmentGraph,
    responses: &ResponseMatrix,
    k_max: usize,
    y0: Vec<f64>,
    rng: &mut R,
) -> Result<InferenceResult> {
    let a = response_values(graph, responses)?;
    let state = MessageState::with_init(graph, y0)?;
    run_iterative(graph, &a, state, k_max, rng)
}

fn run_iterative<R: Rng + ?Sized>(
    graph: &AssignmentGraph,
    a: &[f64],
    mut state: MessageState,
    k_max: usize,
    rng: &mut R,
) -> Result<InferenceResult> {
    if k_max == 0 {
        return Err(Error::InvalidInput("k_max must be at least 1".into()));
    }
    for _ in 1..k_max {
        state.step(graph, a);
    }
    // Decisions use the worker messages of round k_max - 1; the final task
    // update still runs so the worker scores reflect round k_max.
    let decision_values = state.decision_values(graph, a);
    state.update_x(graph, a);
    let worker_scores = state.worker_scores(graph, a);
    let estimates = decide(&decision_values, rng);
    Ok(InferenceResult {
        estimates,
        decision_values,
        worker_scores: Some(worker_scores),
        iterations_run: k_max,
    })
}

fn response_values(graph: &AssignmentGraph, responses: &ResponseMatrix) -> Result<Vec<f64>> {
    Ok(responses
        .aligned(graph)?
        .into_iter()
        .map(f64::from)
        .collect())
}

/// Majority voting: `decision_i = sum_{j in ∂i} A_{ij}`.
pub fn majority_vote<R: Rng + ?Sized>(
    graph: &AssignmentGraph,
    responses: &ResponseMatrix,
    rng: &mut R,
) -> Result<InferenceResult> {
    let a = response_values(graph, responses)?;
    let decision_values = majority_decision_values(graph, &a);
    let estimates = decide(&decision_values, rng);
    Ok(InferenceResult {
        estimates,
        decision_values,
        worker_scores: None,
        iterations_run: 1,
    })
}

fn majority_decision_values(graph: &AssignmentGraph, a: &[f64]) -> Vec<f64> {
    (0..graph.m())
        .map(|i| graph.task_edges(i).map(|e| a[e]).sum())
        .collect()
}

/// One-coin EM configuration. The defaults are deliberately plain: uniform
/// label prior, every worker starts at `p_hat = 0.7`, reliability estimates
/// clamped away from 0 and 1 so log-odds stay finite.
#[derive(Debug, Clone)]
pub struct EmOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub init_p: f64,
    pub clamp: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iter: 100,
            tol: 1e-6,
            init_p: 0.7,
            clamp: LOG_ODDS_CLAMP,
        }
    }
}

struct EmState {
    p_hat: Vec<f64>,
    log_odds: Vec<f64>,
    iterations: usize,
}

/// E-step: task log-odds from current reliabilities; M-step: reliability as
/// the posterior-weighted fraction of agreements. Stops when no reliability
/// moves by more than `tol`.
///
/// The per-edge agreement weight is `sigmoid(A_ij * L_i)`: the posterior
/// probability that the worker's answer is the true label. Written this way
/// (rather than branching on the answer's sign) the whole fit is exactly
/// equivariant under flipping every response.
fn em_core(graph: &AssignmentGraph, a: &[i8], opts: &EmOptions) -> EmState {
    let mut p_hat = vec![opts.init_p.clamp(opts.clamp, 1.0 - opts.clamp); graph.n()];
    let mut log_odds = vec![0.0; graph.m()];
    let mut iterations = 0;
    let e_step = |p_hat: &[f64], log_odds: &mut [f64]| {
        for (i, slot) in log_odds.iter_mut().enumerate() {
            let mut s = 0.0;
            for e in graph.task_edges(i) {
                let j = graph.edge_worker(e);
                s += f64::from(a[e]) * (p_hat[j] / (1.0 - p_hat[j])).ln();
            }
            *slot = s;
        }
    };
    for _ in 0..opts.max_iter {
        iterations += 1;
        e_step(&p_hat, &mut log_odds);
        let mut max_delta = 0.0f64;
        for (j, slot) in p_hat.iter_mut().enumerate() {
            let edges = graph.worker_edges(j);
            let mut agree = 0.0;
            for &e in edges {
                let e = e as usize;
                let i = graph.edge_task(e);
                agree += 1.0 / (1.0 + (-f64::from(a[e]) * log_odds[i]).exp());
            }
            let next = (agree / edges.len() as f64).clamp(opts.clamp, 1.0 - opts.clamp);
            max_delta = max_delta.max((next - *slot).abs());
            *slot = next;
        }
        if max_delta < opts.tol {
            break;
        }
    }
    // Log-odds refreshed against the final reliabilities.
    e_step(&p_hat, &mut log_odds);
    EmState {
        p_hat,
        log_odds,
        iterations,
    }
}

/// One-coin EM inference. `decision_values` are posterior log-odds and
/// `worker_scores` are the estimated reliabilities.
pub fn em_infer<R: Rng + ?Sized>(
    graph: &AssignmentGraph,
    responses: &ResponseMatrix,
    opts: &EmOptions,
    rng: &mut R,
) -> Result<InferenceResult> {
    let a = responses.aligned(graph)?;
    let state = em_core(graph, &a, opts);
    let estimates = decide(&state.log_odds, rng);
    Ok(InferenceResult {
        estimates,
        decision_values: state.log_odds,
        worker_scores: Some(state.p_hat),
        iterations_run: state.iterations,
    })
}

/// Per-worker reliability estimates from the EM baseline, without committing
/// to label estimates. Used by the data-driven collective-quality estimator.
pub fn em_worker_estimates(
    graph: &AssignmentGraph,
    responses: &ResponseMatrix,
    opts: &EmOptions,
) -> Result<Vec<f64>> {
    let a = responses.aligned(graph)?;
    Ok(em_core(graph, &a, opts).p_hat)
}

/// Power-iteration spectral inference with a random start.
pub fn spectral_infer<R: Rng + ?Sized>(
    graph: &AssignmentGraph,
    responses: &ResponseMatrix,
    power_iters: usize,
    rng: &mut R,
) -> Result<InferenceResult> {
    let a = response_values(graph, responses)?;
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    const MAX_RESTARTS: usize = 8;
    for _ in 0..MAX_RESTARTS {
        let v0: Vec<f64> = (0..graph.n()).map(|_| normal.sample(rng)).collect();
        match power_iteration(graph, &a, power_iters, v0) {
            Ok((u, v)) => return finish_spectral(graph, &a, u, v, power_iters, rng),
            Err(Error::Numerical(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Numerical(format!(
        "power iteration collapsed to the zero vector {MAX_RESTARTS} times"
    )))
}

/// Power iteration from an explicit start vector (no restarts).
pub fn spectral_infer_with_init<R: Rng + ?Sized>(
    graph: &AssignmentGraph,
    responses: &ResponseMatrix,
    power_iters: usize,
    v0: Vec<f64>,
    rng: &mut R,
) -> Result<InferenceResult> {
    let a = response_values(graph, responses)?;
    let (u, v) = power_iteration(graph, &a, power_iters, v0)?;
    finish_spectral(graph, &a, u, v, power_iters, rng)
}

fn power_iteration(
    graph: &AssignmentGraph,
    a: &[f64],
    power_iters: usize,
    mut v: Vec<f64>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if power_iters == 0 {
        return Err(Error::InvalidInput("power_iters must be at least 1".into()));
    }
    if v.len() != graph.n() {
        return Err(Error::DimensionMismatch(format!(
            "v0 has {} entries for {} workers",
            v.len(),
            graph.n()
        )));
    }
    normalize(&mut v)?;
    let mut u = vec![0.0; graph.m()];
    for _ in 0..power_iters {
        for (i, slot) in u.iter_mut().enumerate() {
            *slot = graph
                .task_edges(i)
                .map(|e| a[e] * v[graph.edge_worker(e)])
                .sum();
        }
        normalize(&mut u)?;
        for (j, slot) in v.iter_mut().enumerate() {
            *slot = graph
                .worker_edges(j)
                .iter()
                .map(|&e| a[e as usize] * u[graph.edge_task(e as usize)])
                .sum();
        }
        normalize(&mut v)?;
    }
    Ok((u, v))
}

fn normalize(vec: &mut [f64]) -> Result<()> {
    let norm = vec.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Numerical(
            "zero or non-finite vector in power iteration".into(),
        ));
    }
    for x in vec.iter_mut() {
        *x /= norm;
    }
    Ok(())
}

fn finish_spectral<R: Rng + ?Sized>(
    graph: &AssignmentGraph,
    a: &[f64],
    mut u: Vec<f64>,
    mut v: Vec<f64>,
    power_iters: usize,
    rng: &mut R,
) -> Result<InferenceResult> {
    // A singular vector is defined up to sign. mu > 0 means the truth is
    // positively correlated with the majority direction, so align with it.
    let majority = majority_decision_values(graph, a);
    let dot: f64 = u.iter().zip(&majority).map(|(x, y)| x * y).sum();
    if dot < 0.0 {
        for x in u.iter_mut() {
            *x = -*x;
        }
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
    let estimates = decide(&u, rng);
    Ok(InferenceResult {
        estimates,
        decision_values: u,
        worker_scores: Some(v),
        iterations_run: power_iters,
    })
}

/// Maximum-likelihood decoding with the true reliabilities:
/// `decision_i = sum_{j in ∂i} log(p_j / (1 - p_j)) A_{ij}`. Workers with
/// `p = 1/2` carry weight exactly zero; `p ∈ {0, 1}` is clamped so the weight
/// stays finite.
pub fn oracle_ml<R: Rng + ?Sized>(
    graph: &AssignmentGraph,
    responses: &ResponseMatrix,
    workers: &WorkerSample,
    rng: &mut R,
) -> Result<InferenceResult> {
    if workers.len() != graph.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} reliabilities for {} workers",
            workers.len(),
            graph.n()
        )));
    }
    let a = response_values(graph, responses)?;
    let weights: Vec<f64> = workers
        .p
        .iter()
        .map(|&p| {
            if p == 0.5 {
                0.0
            } else {
                let pc = p.clamp(LOG_ODDS_CLAMP, 1.0 - LOG_ODDS_CLAMP);
                (pc / (1.0 - pc)).ln()
            }
        })
        .collect();
    let decision_values: Vec<f64> = (0..graph.m())
        .map(|i| {
            graph
                .task_edges(i)
                .map(|e| a[e] * weights[graph.edge_worker(e)])
                .sum()
        })
        .collect();
    let estimates = decide(&decision_values, rng);
    Ok(InferenceResult {
        estimates,
        decision_values,
        worker_scores: None,
        iterations_run: 1,
    })
}
