//! Worker-reliability priors, crowd summary statistics, and response sampling.
//!
//! A crowd is a distribution over worker reliabilities `p ∈ [0,1]`: a worker
//! with reliability `p` answers each assigned binary task correctly with
//! probability `p`, independently across tasks. Two moments of `2p - 1`
//! summarize a crowd:
//!
//! * `mu = E[2p - 1]` — the effective first moment; it must be positive for
//!   the sign of the answers to be identifiable at all,
//! * `q = E[(2p - 1)^2]` — the collective quality; it governs how many
//!   responses per task are needed for a target error rate.
//!
//! Always `mu^2 <= q <= 1`, and for priors supported on `p >= 1/2` also
//! `q <= mu <= sqrt(q)`.

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::allocation::{AssignmentGraph, GroundTruth};
use crate::error::{Error, Result};
use crate::inference::{em_worker_estimates, EmOptions, ResponseMatrix};

/// Tolerance for "mixture weights sum to one".
const WEIGHT_SUM_TOL: f64 = 1e-12;

/// A prior distribution over worker reliabilities.
#[derive(Debug, Clone, PartialEq)]
pub enum WorkerModel {
    /// A worker is a perfect "hammer" (`p = 1`) with probability `hammer_prob`
    /// and a uniformly random "spammer" (`p = 1/2`) otherwise. For this model
    /// `mu = q = hammer_prob`.
    SpammerHammer { hammer_prob: f64 },
    /// `p ~ Beta(alpha, beta)`; `q = 1 - 4ab/((a+b)(a+b+1))`.
    Beta { alpha: f64, beta: f64 },
    /// Every worker has the same reliability `p`.
    FixedP { p: f64 },
    /// `p = 0` or `p = 1` with probability 1/2 each (`mu = 0`, `q = 1`):
    /// workers always lie or always tell the truth.
    Haldane,
    /// Finite mixture of point masses: pairs `(p_i, weight_i)` with the
    /// weights summing to one.
    FiniteMixture(Vec<(f64, f64)>),
}

impl WorkerModel {
    pub fn spammer_hammer(hammer_prob: f64) -> Result<Self> {
        let model = WorkerModel::SpammerHammer { hammer_prob };
        model.validate()?;
        Ok(model)
    }

    pub fn beta(alpha: f64, beta: f64) -> Result<Self> {
        let model = WorkerModel::Beta { alpha, beta };
        model.validate()?;
        Ok(model)
    }

    pub fn fixed_p(p: f64) -> Result<Self> {
        let model = WorkerModel::FixedP { p };
        model.validate()?;
        Ok(model)
    }

    pub fn haldane() -> Self {
        WorkerModel::Haldane
    }

    pub fn finite_mixture(components: Vec<(f64, f64)>) -> Result<Self> {
        let model = WorkerModel::FiniteMixture(components);
        model.validate()?;
        Ok(model)
    }

    /// Checks the model parameters: probabilities in `[0,1]`, positive beta
    /// shapes, non-negative mixture weights summing to one.
    pub fn validate(&self) -> Result<()> {
        let prob = |x: f64, what: &str| -> Result<()> {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!(
                    "{what} must lie in [0,1], got {x}"
                )))
            }
        };
        match self {
            WorkerModel::SpammerHammer { hammer_prob } => prob(*hammer_prob, "hammer_prob"),
            WorkerModel::Beta { alpha, beta } => {
                if *alpha > 0.0 && *beta > 0.0 && alpha.is_finite() && beta.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidInput(format!(
                        "beta shapes must be positive and finite, got alpha={alpha}, beta={beta}"
                    )))
                }
            }
            WorkerModel::FixedP { p } => prob(*p, "p"),
            WorkerModel::Haldane => Ok(()),
            WorkerModel::FiniteMixture(components) => {
                if components.is_empty() {
                    return Err(Error::InvalidInput(
                        "mixture must have at least one component".into(),
                    ));
                }
                let mut total = 0.0;
                for &(p, w) in components {
                    prob(p, "mixture component p")?;
                    if !(w >= 0.0 && w.is_finite()) {
                        return Err(Error::InvalidInput(format!(
                            "mixture weight must be non-negative, got {w}"
                        )));
                    }
                    total += w;
                }
                if (total - 1.0).abs() > WEIGHT_SUM_TOL {
                    return Err(Error::InvalidInput(format!(
                        "mixture weights must sum to 1, got {total}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Closed-form `(mu, q)` for this prior.
    pub fn crowd_stats(&self) -> Result<CrowdStats> {
        self.validate()?;
        let stats = match self {
            WorkerModel::SpammerHammer { hammer_prob } => CrowdStats {
                mu: *hammer_prob,
                q: *hammer_prob,
            },
            WorkerModel::Beta { alpha, beta } => {
                let s = alpha + beta;
                CrowdStats {
                    mu: (alpha - beta) / s,
                    q: 1.0 - 4.0 * alpha * beta / (s * (s + 1.0)),
                }
            }
            WorkerModel::FixedP { p } => {
                let d = 2.0 * p - 1.0;
                CrowdStats { mu: d, q: d * d }
            }
            WorkerModel::Haldane => CrowdStats { mu: 0.0, q: 1.0 },
            WorkerModel::FiniteMixture(components) => {
                let mut mu = 0.0;
                let mut q = 0.0;
                for &(p, w) in components {
                    let d = 2.0 * p - 1.0;
                    mu += w * d;
                    q += w * d * d;
                }
                CrowdStats { mu, q }
            }
        };
        debug_assert!(stats.mu * stats.mu <= stats.q + 1e-12);
        Ok(stats)
    }

    /// Draws one reliability from the prior.
    pub fn sample_reliability<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            WorkerModel::SpammerHammer { hammer_prob } => {
                if rng.random::<f64>() < *hammer_prob {
                    1.0
                } else {
                    0.5
                }
            }
            WorkerModel::Beta { alpha, beta } => {
                // Shapes were validated at construction.
                Beta::new(*alpha, *beta)
                    .expect("validated beta shapes")
                    .sample(rng)
            }
            WorkerModel::FixedP { p } => *p,
            WorkerModel::Haldane => {
                if rng.random::<f64>() < 0.5 {
                    0.0
                } else {
                    1.0
                }
            }
            WorkerModel::FiniteMixture(components) => {
                let u = rng.random::<f64>();
                let mut acc = 0.0;
                for &(p, w) in components {
                    acc += w;
                    if u < acc {
                        return p;
                    }
                }
                components.last().expect("non-empty mixture").0
            }
        }
    }
}

/// Summary moments of a crowd; see the module docs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrowdStats {
    pub mu: f64,
    pub q: f64,
}

/// Realized reliabilities of a sampled worker population.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerSample {
    pub p: Vec<f64>,
}

impl WorkerSample {
    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// Draws `n` i.i.d. worker reliabilities from the prior. Deterministic given
/// the random source.
pub fn sample_workers<R: Rng + ?Sized>(
    model: &WorkerModel,
    n: usize,
    rng: &mut R,
) -> Result<WorkerSample> {
    if n == 0 {
        return Err(Error::InvalidInput(
            "worker count must be at least 1".into(),
        ));
    }
    model.validate()?;
    let p = (0..n).map(|_| model.sample_reliability(rng)).collect();
    Ok(WorkerSample { p })
}

/// Samples one `±1` response per graph edge: worker `j` answers task `i`
/// correctly (`A_ij = t_i`) with probability `p_j`, otherwise `A_ij = -t_i`.
/// Entries are conditionally independent given the reliabilities.
pub fn sample_responses<R: Rng + ?Sized>(
    graph: &AssignmentGraph,
    truth: &GroundTruth,
    workers: &WorkerSample,
    rng: &mut R,
) -> Result<ResponseMatrix> {
    if workers.len() != graph.n() {
        return Err(Error::DimensionMismatch(format!(
            "worker sample has {} entries but graph has {} workers",
            workers.len(),
            graph.n()
        )));
    }
    if truth.len() != graph.m() {
        return Err(Error::DimensionMismatch(format!(
            "truth has {} entries but graph has {} tasks",
            truth.len(),
            graph.m()
        )));
    }
    let mut entries = Vec::with_capacity(graph.edge_count());
    for (task, worker) in graph.edges() {
        let t = truth.t[task];
        let answer = if rng.random::<f64>() < workers.p[worker] {
            t
        } else {
            -t
        };
        entries.push((task as u32, worker as u32, answer));
    }
    Ok(ResponseMatrix::from_triplets(graph.m(), graph.n(), entries))
}

/// Plug-in estimate of the collective quality from data alone:
/// `q_hat = mean_j (2 p_hat_j - 1)^2`, where `p_hat` are the per-worker
/// reliability estimates of the one-coin EM baseline, clamped to `[0,1]`.
///
/// Requires every worker to answer at least two tasks; a worker seen only
/// once carries no information about its own reliability.
pub fn estimate_q_from_data(responses: &ResponseMatrix, graph: &AssignmentGraph) -> Result<f64> {
    if graph.r() < 2 {
        return Err(Error::InvalidInput(format!(
            "collective quality is unidentifiable with worker degree {} < 2",
            graph.r()
        )));
    }
    let p_hat = em_worker_estimates(graph, responses, &EmOptions::default())?;
    let q_hat = p_hat
        .iter()
        .map(|&p| {
            let d = 2.0 * p - 1.0;
            d * d
        })
        .sum::<f64>()
        / p_hat.len() as f64;
    Ok(q_hat.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn spammer_hammer_stats() {
        let stats = WorkerModel::spammer_hammer(0.3)
            .unwrap()
            .crowd_stats()
            .unwrap();
        assert!((stats.mu - 0.3).abs() < 1e-15);
        assert!((stats.q - 0.3).abs() < 1e-15);
    }

    #[test]
    fn perfect_crowd_stats() {
        let stats = WorkerModel::fixed_p(1.0).unwrap().crowd_stats().unwrap();
        assert_eq!(stats.mu, 1.0);
        assert_eq!(stats.q, 1.0);
    }

    #[test]
    fn beta_stats_match_closed_form() {
        let uniform = WorkerModel::beta(1.0, 1.0).unwrap().crowd_stats().unwrap();
        assert!((uniform.mu - 0.0).abs() < 1e-15);
        assert!((uniform.q - 1.0 / 3.0).abs() < 1e-15);

        let skewed = WorkerModel::beta(2.0, 1.0).unwrap().crowd_stats().unwrap();
        assert!((skewed.mu - 1.0 / 3.0).abs() < 1e-15);
        assert!((skewed.q - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn beta_mu_matches_monte_carlo() {
        // Independent oracle for mu of Beta(1,1): sample mean of 2p-1 over 10^6 draws.
        let model = WorkerModel::beta(1.0, 1.0).unwrap();
        let mut r = rng(7);
        let n = 1_000_000;
        let sample = sample_workers(&model, n, &mut r).unwrap();
        let mu_hat: f64 = sample.p.iter().map(|p| 2.0 * p - 1.0).sum::<f64>() / n as f64;
        // Var(2p-1) = q - mu^2 = 1/3 for Beta(1,1).
        let se = (1.0f64 / 3.0 / n as f64).sqrt();
        assert!((mu_hat - 0.0).abs() < 3.0 * se, "mu_hat={mu_hat}, se={se}");
    }

    #[test]
    fn haldane_stats() {
        let stats = WorkerModel::haldane().crowd_stats().unwrap();
        assert_eq!(stats.mu, 0.0);
        assert_eq!(stats.q, 1.0);
    }

    #[test]
    fn mixture_stats_weighted_sum() {
        // Adversarial-design mixture: p in {1/2, (1+a)/2} with a = 0.8.
        let a: f64 = 0.8;
        let q = 0.32;
        let w_good = q / (a * a);
        let model =
            WorkerModel::finite_mixture(vec![(0.5, 1.0 - w_good), ((1.0 + a) / 2.0, w_good)])
                .unwrap();
        let stats = model.crowd_stats().unwrap();
        assert!((stats.q - q).abs() < 1e-12);
        assert!((stats.mu - w_good * a).abs() < 1e-12);
    }

    #[test]
    fn mixture_weights_must_sum_to_one() {
        assert!(WorkerModel::finite_mixture(vec![(0.5, 0.4), (1.0, 0.4)]).is_err());
    }

    #[test]
    fn invalid_probabilities_rejected() {
        assert!(WorkerModel::spammer_hammer(1.5).is_err());
        assert!(WorkerModel::fixed_p(-0.1).is_err());
        assert!(WorkerModel::beta(0.0, 1.0).is_err());
    }

    #[test]
    fn q_is_at_least_mu_squared() {
        for model in [
            WorkerModel::spammer_hammer(0.3).unwrap(),
            WorkerModel::beta(2.0, 1.0).unwrap(),
            WorkerModel::haldane(),
            WorkerModel::finite_mixture(vec![(0.5, 0.5), (0.9, 0.5)]).unwrap(),
        ] {
            let s = model.crowd_stats().unwrap();
            assert!(s.q >= s.mu * s.mu - 1e-15);
        }
        // Equality holds exactly for a point mass.
        let s = WorkerModel::fixed_p(0.7).unwrap().crowd_stats().unwrap();
        assert!((s.q - s.mu * s.mu).abs() < 1e-15);
    }

    #[test]
    fn sample_workers_deterministic_given_seed() {
        let model = WorkerModel::beta(2.0, 3.0).unwrap();
        let a = sample_workers(&model, 50, &mut rng(3)).unwrap();
        let b = sample_workers(&model, 50, &mut rng(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fixed_p_sample_is_constant() {
        let model = WorkerModel::fixed_p(0.7).unwrap();
        let sample = sample_workers(&model, 5, &mut rng(1)).unwrap();
        assert_eq!(sample.p, vec![0.7; 5]);
    }

    #[test]
    fn all_hammers_sample() {
        let model = WorkerModel::spammer_hammer(1.0).unwrap();
        let sample = sample_workers(&model, 3, &mut rng(1)).unwrap();
        assert_eq!(sample.p, vec![1.0; 3]);
    }

    #[test]
    fn hammer_fraction_concentrates() {
        let model = WorkerModel::spammer_hammer(0.5).unwrap();
        let n = 1_000_000;
        let sample = sample_workers(&model, n, &mut rng(11)).unwrap();
        let hammers = sample.p.iter().filter(|&&p| p == 1.0).count() as f64;
        let frac = hammers / n as f64;
        let se = (0.5f64 * 0.5 / n as f64).sqrt();
        assert!((frac - 0.5).abs() < 3.0 * se, "frac={frac}");
    }

    #[test]
    fn zero_workers_rejected() {
        assert!(sample_workers(&WorkerModel::haldane(), 0, &mut rng(0)).is_err());
    }

    #[test]
    fn single_worker_agreement_converges_to_p() {
        // Law of large numbers on one worker's edges: a single worker of
        // degree 10^5 agrees with the truth at rate p within 3 binomial
        // standard errors.
        use crate::allocation::{build_configuration_graph, GroundTruth};
        let m = 100_000;
        let mut r = rng(21);
        let graph = build_configuration_graph(m, 1, m, &mut r).unwrap();
        assert_eq!(graph.n(), 1);
        let truth = GroundTruth::sample_uniform(m, &mut r);
        let workers = WorkerSample { p: vec![0.7] };
        let responses = sample_responses(&graph, &truth, &workers, &mut r).unwrap();
        let agree = responses
            .entries()
            .iter()
            .filter(|&&(t, _, a)| a == truth.t[t as usize])
            .count() as f64;
        let rate = agree / m as f64;
        let se = (0.7f64 * 0.3 / m as f64).sqrt();
        assert!((rate - 0.7).abs() < 3.0 * se, "agreement rate {rate}");
    }

    #[test]
    fn adversarial_workers_flip_everything() {
        use crate::allocation::{build_configuration_graph, GroundTruth};
        let mut r = rng(23);
        let graph = build_configuration_graph(20, 3, 3, &mut r).unwrap();
        let truth = GroundTruth::sample_uniform(20, &mut r);
        let workers = WorkerSample {
            p: vec![0.0; graph.n()],
        };
        let responses = sample_responses(&graph, &truth, &workers, &mut r).unwrap();
        assert!(responses
            .entries()
            .iter()
            .all(|&(t, _, a)| a == -truth.t[t as usize]));
    }

    #[test]
    fn responses_reject_mismatched_dimensions() {
        use crate::allocation::{build_configuration_graph, GroundTruth};
        let mut r = rng(22);
        let graph = build_configuration_graph(6, 2, 3, &mut r).unwrap();
        let truth = GroundTruth::all_ones(6);
        let short = WorkerSample {
            p: vec![0.5; graph.n() - 1],
        };
        assert!(sample_responses(&graph, &truth, &short, &mut r).is_err());
        let workers = WorkerSample {
            p: vec![0.5; graph.n()],
        };
        let short_truth = GroundTruth::all_ones(5);
        assert!(sample_responses(&graph, &short_truth, &workers, &mut r).is_err());
    }

    #[test]
    fn monte_carlo_stats_match_closed_form() {
        // (mu_hat, q_hat) over 10^6 draws within 4 standard errors for every variant.
        let models = [
            WorkerModel::spammer_hammer(0.3).unwrap(),
            WorkerModel::beta(2.0, 1.0).unwrap(),
            WorkerModel::fixed_p(0.7).unwrap(),
            WorkerModel::haldane(),
            WorkerModel::finite_mixture(vec![(0.5, 0.6), (0.9, 0.4)]).unwrap(),
        ];
        let n = 1_000_000usize;
        for (idx, model) in models.iter().enumerate() {
            let stats = model.crowd_stats().unwrap();
            let sample = sample_workers(model, n, &mut rng(100 + idx as u64)).unwrap();
            let d: Vec<f64> = sample.p.iter().map(|p| 2.0 * p - 1.0).collect();
            let mu_hat = d.iter().sum::<f64>() / n as f64;
            let q_hat = d.iter().map(|x| x * x).sum::<f64>() / n as f64;
            // Standard errors from the exact moments: Var(d) = q - mu^2,
            // Var(d^2) = E[d^4] - q^2 <= q - q^2 + slack; use sample variance instead.
            let var_d =
                (d.iter().map(|x| (x - mu_hat) * (x - mu_hat)).sum::<f64>() / n as f64).max(1e-30);
            let d2: Vec<f64> = d.iter().map(|x| x * x).collect();
            let var_d2 =
                (d2.iter().map(|x| (x - q_hat) * (x - q_hat)).sum::<f64>() / n as f64).max(1e-30);
            let se_mu = (var_d / n as f64).sqrt();
            let se_q = (var_d2 / n as f64).sqrt();
            // The 1e-9 slack covers accumulation error when summing 10^6 terms
            // (relevant for the point-mass prior, whose true SE is zero).
            assert!(
                (mu_hat - stats.mu).abs() <= 4.0 * se_mu + 1e-9,
                "model {idx}: mu_hat={mu_hat} vs mu={}",
                stats.mu
            );
            assert!(
                (q_hat - stats.q).abs() <= 4.0 * se_q + 1e-9,
                "model {idx}: q_hat={q_hat} vs q={}",
                stats.q
            );
        }
    }
}
