//! Task allocation: random `(l, r)`-regular bipartite assignment graphs and
//! adaptive allocation schemes.
//!
//! The non-adaptive allocation assigns each of `m` tasks to exactly `l`
//! workers and each of `n = m*l/r` workers to exactly `r` tasks. Graphs are
//! drawn from the configuration model: the `m*l` task half-edges are paired
//! with the `n*r` worker half-edges by a uniform random permutation. The raw
//! pairing may contain parallel edges; those are repaired with
//! degree-preserving double-edge swaps so that downstream inference never
//! sees a duplicated `(task, worker)` response.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::inference::{default_k_max, iterative_infer};
use crate::workers::{sample_workers, CrowdStats, WorkerModel};

/// How many times the builder restarts from a fresh pairing before giving up.
const MAX_RESAMPLES: usize = 64;

/// An immutable `(l, r)`-regular bipartite assignment graph.
///
/// Edges are stored grouped by task: edge id `e` belongs to task `e / l`, so
/// task `i`'s edges occupy ids `i*l .. (i+1)*l`. A second index groups edge
/// ids by worker. The graph is simple: no `(task, worker)` pair appears twice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentGraph {
    m: usize,
    n: usize,
    l: usize,
    r: usize,
    /// Worker endpoint of each edge id.
    edge_workers: Vec<u32>,
    /// Edge ids grouped by worker: worker `j` owns `worker_edges[j*r .. (j+1)*r]`.
    worker_edge_ids: Vec<u32>,
}

impl AssignmentGraph {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn edge_count(&self) -> usize {
        self.edge_workers.len()
    }

    /// Task endpoint of edge `e`.
    #[inline]
    pub fn edge_task(&self, e: usize) -> usize {
        e / self.l
    }

    /// Worker endpoint of edge `e`.
    #[inline]
    pub fn edge_worker(&self, e: usize) -> usize {
        self.edge_workers[e] as usize
    }

    /// Edge ids incident to task `i`.
    #[inline]
    pub fn task_edges(&self, i: usize) -> std::ops::Range<usize> {
        i * self.l..(i + 1) * self.l
    }

    /// Edge ids incident to worker `j`.
    #[inline]
    pub fn worker_edges(&self, j: usize) -> &[u32] {
        &self.worker_edge_ids[j * self.r..(j + 1) * self.r]
    }

    /// Workers assigned to task `i`.
    pub fn task_neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.task_edges(i).map(move |e| self.edge_worker(e))
    }

    /// Tasks assigned to worker `j`.
    pub fn worker_neighbors(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.worker_edges(j)
            .iter()
            .map(move |&e| self.edge_task(e as usize))
    }

    /// All edges as `(task, worker)` pairs in edge-id order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edge_workers
            .iter()
            .enumerate()
            .map(move |(e, &w)| (e / self.l, w as usize))
    }

    /// Rebuilds a graph from an explicit edge list, validating exact
    /// regularity and simplicity. Edges may arrive in any order; within each
    /// task the original relative order is kept, so a graph serialized in
    /// edge-id order round-trips field-exactly.
    pub fn from_edges(
        m: usize,
        n: usize,
        l: usize,
        r: usize,
        edges: &[(u32, u32)],
    ) -> Result<Self> {
        check_params(m, l, r)?;
        if n != m * l / r {
            return Err(Error::InvalidInput(format!(
                "n must equal m*l/r = {}, got {n}",
                m * l / r
            )));
        }
        if edges.len() != m * l {
            return Err(Error::DimensionMismatch(format!(
                "expected {} edges, got {}",
                m * l,
                edges.len()
            )));
        }
        let mut edge_workers = vec![0u32; m * l];
        let mut task_fill = vec![0usize; m];
        let mut worker_deg = vec![0usize; n];
        let mut seen = std::collections::HashSet::with_capacity(edges.len());
        for &(t, w) in edges {
            let (t, w) = (t as usize, w as usize);
            if t >= m || w >= n {
                return Err(Error::InvalidInput(format!(
                    "edge ({t},{w}) out of range (m={m}, n={n})"
                )));
            }
            if !seen.insert((t, w)) {
                return Err(Error::InvalidInput(format!("parallel edge ({t},{w})")));
            }
            if task_fill[t] == l {
                return Err(Error::InvalidInput(format!(
                    "task {t} has degree > l = {l}"
                )));
            }
            edge_workers[t * l + task_fill[t]] = w as u32;
            task_fill[t] += 1;
            worker_deg[w] += 1;
        }
        if let Some(t) = task_fill.iter().position(|&c| c != l) {
            return Err(Error::InvalidInput(format!(
                "task {t} has degree {} != l = {l}",
                task_fill[t]
            )));
        }
        if let Some(j) = worker_deg.iter().position(|&c| c != r) {
            return Err(Error::InvalidInput(format!(
                "worker {j} has degree {} != r = {r}",
                worker_deg[j]
            )));
        }
        Ok(Self::from_parts(m, n, l, r, edge_workers))
    }

    fn from_parts(m: usize, n: usize, l: usize, r: usize, edge_workers: Vec<u32>) -> Self {
        // Counting sort of edge ids by worker; each worker has exactly r slots.
        let mut fill = vec![0usize; n];
        let mut worker_edge_ids = vec![0u32; n * r];
        for (e, &w) in edge_workers.iter().enumerate() {
            let w = w as usize;
            worker_edge_ids[w * r + fill[w]] = e as u32;
            fill[w] += 1;
        }
        AssignmentGraph {
            m,
            n,
            l,
            r,
            edge_workers,
            worker_edge_ids,
        }
    }
}

fn check_params(m: usize, l: usize, r: usize) -> Result<()> {
    if m == 0 || l == 0 || r == 0 {
        return Err(Error::InvalidInput("m, l, r must all be at least 1".into()));
    }
    if !(m * l).is_multiple_of(r) {
        return Err(Error::InvalidInput(format!(
            "m*l = {} is not divisible by r = {r}; the allocation must be exactly regular",
            m * l
        )));
    }
    let n = m * l / r;
    // A simple graph needs l distinct workers per task and r distinct tasks per worker.
    if l > n || r > m {
        return Err(Error::Infeasible(format!(
            "no simple ({l},{r})-regular graph on {m} tasks and {n} workers exists (need l <= n and r <= m)"
        )));
    }
    Ok(())
}

/// Builds a random `(l, r)`-regular simple bipartite graph on `m` tasks and
/// `n = m*l/r` workers from the configuration model, repairing multi-edges.
/// Deterministic given the random source.
pub fn build_configuration_graph<R: Rng + ?Sized>(
    m: usize,
    l: usize,
    r: usize,
    rng: &mut R,
) -> Result<AssignmentGraph> {
    check_params(m, l, r)?;
    let n = m * l / r;
    let total = m * l;
    for _ in 0..MAX_RESAMPLES {
        // Pair task half-edge h with worker half-edge perm[h]; worker of a
        // half-edge s is s / r.
        let mut perm: Vec<u32> = (0..total as u32).collect();
        shuffle(&mut perm, rng);
        let mut edge_workers: Vec<u32> = perm.iter().map(|&s| s / r as u32).collect();
        if repair_multi_edges(m, n, l, &mut edge_workers, rng).is_ok() {
            return Ok(AssignmentGraph::from_parts(m, n, l, r, edge_workers));
        }
    }
    Err(Error::Infeasible(format!(
        "failed to repair a ({l},{r})-regular pairing into a simple graph after {MAX_RESAMPLES} resamples"
    )))
}

/// Fisher–Yates; `Rng::random_range` keeps this reproducible across platforms.
fn shuffle<R: Rng + ?Sized>(values: &mut [u32], rng: &mut R) {
    for i in (1..values.len()).rev() {
        let j = rng.random_range(0..=i);
        values.swap(i, j);
    }
}

/// Removes parallel edges from a half-edge pairing by degree-preserving
/// double-edge swaps: a duplicated edge `(t1,w1)` and a random partner
/// `(t2,w2)` are replaced by `(t1,w2)` and `(t2,w1)` whenever that creates no
/// new parallel edge. Every accepted swap strictly reduces the number of
/// excess parallel pairs, so this terminates quickly; a proposal budget
/// guards against unlucky dense corners, in which case the caller resamples.
fn repair_multi_edges<R: Rng + ?Sized>(
    m: usize,
    n: usize,
    l: usize,
    edge_workers: &mut [u32],
    rng: &mut R,
) -> Result<()> {
    let total = edge_workers.len();
    let mut counts: HashMap<(u32, u32), u32> = HashMap::with_capacity(total);
    for (e, &w) in edge_workers.iter().enumerate() {
        *counts.entry(((e / l) as u32, w)).or_insert(0) += 1;
    }
    let mut stack: Vec<usize> = (0..total)
        .filter(|&e| counts[&((e / l) as u32, edge_workers[e])] >= 2)
        .collect();
    if stack.is_empty() {
        return Ok(());
    }
    debug_assert!(l <= n && edge_workers.len() / l <= m * l); // feasibility checked by caller
    let mut proposals = 0usize;
    let max_proposals = 200 * total + 1000;
    while let Some(e) = stack.pop() {
        let t1 = (e / l) as u32;
        let w1 = edge_workers[e];
        if counts.get(&(t1, w1)).copied().unwrap_or(0) < 2 {
            continue; // already fixed by an earlier swap
        }
        loop {
            proposals += 1;
            if proposals > max_proposals {
                return Err(Error::Infeasible(
                    "double-edge swap budget exhausted".into(),
                ));
            }
            let f = rng.random_range(0..total);
            let t2 = (f / l) as u32;
            let w2 = edge_workers[f];
            if t1 == t2 || w1 == w2 {
                continue;
            }
            if counts.contains_key(&(t1, w2)) || counts.contains_key(&(t2, w1)) {
                continue;
            }
            decrement(&mut counts, (t1, w1));
            decrement(&mut counts, (t2, w2));
            counts.insert((t1, w2), 1);
            counts.insert((t2, w1), 1);
            edge_workers[e] = w2;
            edge_workers[f] = w1;
            break;
        }
    }
    debug_assert!(counts.values().all(|&c| c == 1));
    Ok(())
}

fn decrement(counts: &mut HashMap<(u32, u32), u32>, key: (u32, u32)) {
    if let Some(c) = counts.get_mut(&key) {
        *c -= 1;
        if *c == 0 {
            counts.remove(&key);
        }
    }
}

/// Latent correct answers, one `±1` per task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub t: Vec<i8>,
}

impl GroundTruth {
    /// Uniform random `±1` truth (the default simulation mode).
    pub fn sample_uniform<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Self {
        let t = (0..m)
            .map(|_| if rng.random::<bool>() { 1 } else { -1 })
            .collect();
        GroundTruth { t }
    }

    /// All `+1`; handy for debugging since errors are then sign flips.
    pub fn all_ones(m: usize) -> Self {
        GroundTruth { t: vec![1; m] }
    }

    pub fn from_values(t: Vec<i8>) -> Result<Self> {
        if let Some(idx) = t.iter().position(|&v| v != 1 && v != -1) {
            return Err(Error::InvalidInput(format!(
                "truth entry {idx} is {}, expected ±1",
                t[idx]
            )));
        }
        Ok(GroundTruth { t })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Fraction of estimates that disagree with the truth.
    pub fn error_fraction(&self, estimates: &[i8]) -> f64 {
        assert_eq!(estimates.len(), self.t.len());
        let wrong = estimates
            .iter()
            .zip(&self.t)
            .filter(|(a, b)| a != b)
            .count();
        wrong as f64 / self.t.len() as f64
    }
}

/// Outcome of one run of the adaptive grouping scheme.
#[derive(Debug, Clone)]
pub struct AdaptiveRunResult {
    pub estimates: Vec<i8>,
    pub queries_used: usize,
    pub groups_completed: usize,
}

/// Adaptive allocation for crowds containing perfect workers: tasks are split
/// into `sqrt(m)` groups of `sqrt(m)`, each group is assigned to fresh
/// workers until two workers agree on every task in the group, and the agreed
/// vector is declared the estimate. The total number of queries never exceeds
/// the budget `m * budget_l`; when the budget runs out, unfinished tasks are
/// estimated by fair coin flips.
///
/// Requires `budget_l > 2/q` (otherwise too few reliable workers arrive
/// before the budget is spent) and square `m` unless `allow_padding` is set,
/// in which case the trailing group is padded with repeated tasks.
pub fn adaptive_spammer_hammer<R: Rng + ?Sized>(
    truth: &GroundTruth,
    budget_l: usize,
    model: &WorkerModel,
    allow_padding: bool,
    rng: &mut R,
) -> Result<AdaptiveRunResult> {
    let m = truth.len();
    if m == 0 {
        return Err(Error::InvalidInput("need at least one task".into()));
    }
    let CrowdStats { q, .. } = model.crowd_stats()?;
    if q <= 0.0 || (budget_l as f64) <= 2.0 / q {
        return Err(Error::InvalidInput(format!(
            "budget l = {budget_l} must exceed 2/q = {}",
            if q > 0.0 {
                (2.0 / q).to_string()
            } else {
                "inf".into()
            }
        )));
    }
    let side = (m as f64).sqrt().round() as usize;
    let group_size = if side * side == m {
        side
    } else if allow_padding {
        (m as f64).sqrt().ceil() as usize
    } else {
        return Err(Error::InvalidInput(format!(
            "m = {m} is not a perfect square; pass allow_padding to pad the last group"
        )));
    };
    let budget = m * budget_l;
    let mut estimates = vec![0i8; m];
    let mut queries_used = 0usize;
    let mut groups_completed = 0usize;
    let mut group_tasks = Vec::with_capacity(group_size);

    let mut start = 0usize;
    'groups: while start < m {
        group_tasks.clear();
        group_tasks.extend(start..(start + group_size).min(m));
        // Pad by cycling through the group's own tasks.
        let real = group_tasks.len();
        for pad in 0..group_size - real {
            group_tasks.push(group_tasks[pad % real]);
        }

        let mut seen: Vec<Vec<i8>> = Vec::new();
        loop {
            if queries_used + group_size > budget {
                break 'groups;
            }
            let p = model.sample_reliability(rng);
            let answers: Vec<i8> = group_tasks
                .iter()
                .map(|&i| {
                    if rng.random::<f64>() < p {
                        truth.t[i]
                    } else {
                        -truth.t[i]
                    }
                })
                .collect();
            queries_used += group_size;
            if seen.iter().any(|prev| prev == &answers) {
                for (slot, &task) in group_tasks.iter().enumerate() {
                    estimates[task] = answers[slot];
                }
                groups_completed += 1;
                break;
            }
            seen.push(answers);
        }
        start += group_size;
    }

    for e in estimates.iter_mut() {
        if *e == 0 {
            *e = if rng.random::<bool>() { 1 } else { -1 };
        }
    }
    debug_assert!(queries_used <= budget);
    Ok(AdaptiveRunResult {
        estimates,
        queries_used,
        groups_completed,
    })
}

/// Options for [`incremental_q_design`].
#[derive(Debug, Clone)]
pub struct IncrementalDesignOptions {
    /// Hard cap on the doubling step `a`; exceeding it reports failure.
    pub max_steps: usize,
    /// Per-task queries at assumed quality `q_a`: `ceil(scale / q_a * ln(2/eps))`.
    pub budget_scale: f64,
    /// Runtime guard on a single replica's size.
    pub max_edges_per_replica: usize,
}

impl Default for IncrementalDesignOptions {
    fn default() -> Self {
        IncrementalDesignOptions {
            max_steps: 20,
            budget_scale: 4.0,
            max_edges_per_replica: 200_000_000,
        }
    }
}

/// Outcome of the incremental quality-doubling design.
#[derive(Debug, Clone)]
pub struct IncrementalRunResult {
    pub estimates: Vec<i8>,
    pub total_queries: usize,
    pub stopping_step: usize,
    pub converged: bool,
    /// Tasks on which the two replicas of the final step agreed.
    pub final_agreement: usize,
}

/// Incremental design for a crowd of unknown quality: at step `a` the system
/// is sized for assumed quality `q_a = 2^-a`, two independent replicas are
/// run, and the process stops as soon as the replicas agree on at least
/// `m (1 - 2 eps)` tasks. The first replica's estimates are returned and the
/// cost accounts for both replicas at every step.
pub fn incremental_q_design<R: Rng + ?Sized>(
    truth: &GroundTruth,
    model: &WorkerModel,
    eps: f64,
    opts: &IncrementalDesignOptions,
    rng: &mut R,
) -> Result<IncrementalRunResult> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::InvalidInput(format!(
            "eps must lie in (0, 1/2), got {eps}"
        )));
    }
    let m = truth.len();
    if m == 0 {
        return Err(Error::InvalidInput("need at least one task".into()));
    }
    let mut total_queries = 0usize;
    let mut last_estimates = vec![0i8; m];
    let mut last_agreement = 0usize;

    for a in 1..=opts.max_steps {
        let q_a = 0.5f64.powi(a as i32);
        let l_a = ((opts.budget_scale / q_a) * (2.0 / eps).ln()).ceil() as usize;
        // Cap the degree at m/2: past that the square replica graph is so
        // dense that multi-edge repair degenerates, and with half the crowd
        // answering every task the design is saturated anyway.
        let l_a = l_a.clamp(1, (m / 2).max(1));
        if m * l_a > opts.max_edges_per_replica {
            return Ok(IncrementalRunResult {
                estimates: last_estimates,
                total_queries,
                stopping_step: a,
                converged: false,
                final_agreement: last_agreement,
            });
        }
        let assumed = CrowdStats { mu: q_a, q: q_a };
        let k = default_k_max(l_a, l_a, &assumed);
        let replica = |rng: &mut R| -> Result<Vec<i8>> {
            let graph = build_configuration_graph(m, l_a, l_a, rng)?;
            let workers = sample_workers(model, graph.n(), rng)?;
            let responses = crate::workers::sample_responses(&graph, truth, &workers, rng)?;
            Ok(iterative_infer(&graph, &responses, k, rng)?.estimates)
        };
        let first = replica(rng)?;
        let second = replica(rng)?;
        total_queries += 2 * m * l_a;
        let agreement = first.iter().zip(&second).filter(|(x, y)| x == y).count();
        last_estimates = first;
        last_agreement = agreement;
        if agreement as f64 >= m as f64 * (1.0 - 2.0 * eps) {
            return Ok(IncrementalRunResult {
                estimates: last_estimates,
                total_queries,
                stopping_step: a,
                converged: true,
                final_agreement: agreement,
            });
        }
    }
    Ok(IncrementalRunResult {
        estimates: last_estimates,
        total_queries,
        stopping_step: opts.max_steps,
        converged: false,
        final_agreement: last_agreement,
    })
}

/// Monte Carlo estimate of the probability that the radius-`(2k-1)`
/// neighborhood of a uniformly random task is a tree. Roots are sampled in
/// batches across freshly built graphs; each probe runs a depth-limited BFS
/// and reports a cycle as soon as any vertex is reached twice.
pub fn empirical_tree_probability<R: Rng + ?Sized>(
    m: usize,
    l: usize,
    r: usize,
    k: usize,
    trials: usize,
    rng: &mut R,
) -> Result<f64> {
    check_params(m, l, r)?;
    if k == 0 || trials == 0 {
        return Err(Error::InvalidInput(
            "k and trials must be at least 1".into(),
        ));
    }
    let radius = 2 * k - 1;
    let roots_per_graph = trials.min(m.min(2000));
    let mut task_stamp = vec![0u32; m];
    let mut worker_stamp = vec![0u32; m * l / r];
    let mut stamp = 0u32;
    let mut trees = 0usize;
    let mut done = 0usize;
    while done < trials {
        let graph = build_configuration_graph(m, l, r, rng)?;
        let batch = roots_per_graph.min(trials - done);
        for _ in 0..batch {
            stamp += 1;
            let root = rng.random_range(0..m);
            if neighborhood_is_tree(
                &graph,
                root,
                radius,
                stamp,
                &mut task_stamp,
                &mut worker_stamp,
            ) {
                trees += 1;
            }
        }
        done += batch;
    }
    Ok(trees as f64 / trials as f64)
}

/// Depth-limited BFS cycle check. Nodes at distance `< radius` are expanded
/// along all incident edges except the one they were discovered through; the
/// neighborhood fails to be a tree exactly when some vertex is reached twice.
fn neighborhood_is_tree(
    graph: &AssignmentGraph,
    root: usize,
    radius: usize,
    stamp: u32,
    task_stamp: &mut [u32],
    worker_stamp: &mut [u32],
) -> bool {
    const NO_EDGE: usize = usize::MAX;
    task_stamp[root] = stamp;
    let mut task_frontier: Vec<(usize, usize)> = vec![(root, NO_EDGE)];
    let mut worker_frontier: Vec<(usize, usize)> = Vec::new();
    for depth in 0..radius {
        if depth % 2 == 0 {
            worker_frontier.clear();
            for &(task, in_edge) in &task_frontier {
                for e in graph.task_edges(task) {
                    if e == in_edge {
                        continue;
                    }
                    let w = graph.edge_worker(e);
                    if worker_stamp[w] == stamp {
                        return false;
                    }
                    worker_stamp[w] = stamp;
                    worker_frontier.push((w, e));
                }
            }
        } else {
            task_frontier.clear();
            for &(worker, in_edge) in &worker_frontier {
                for &e in graph.worker_edges(worker) {
                    let e = e as usize;
                    if e == in_edge {
                        continue;
                    }
                    let t = graph.edge_task(e);
                    if task_stamp[t] == stamp {
                        return false;
                    }
                    task_stamp[t] = stamp;
                    task_frontier.push((t, e));
                }
            }
        }
    }
    true
}
