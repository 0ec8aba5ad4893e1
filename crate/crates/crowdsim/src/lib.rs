//! Budget-optimal crowdsourcing simulator.
//!
//! Binary tasks are assigned to anonymous, unreliable workers and the true
//! answers are recovered from the noisy responses. The library covers the
//! whole pipeline:
//!
//! * [`workers`] — reliability priors (spammer-hammer, beta, fixed, Haldane,
//!   finite mixtures), crowd moments `mu = E[2p-1]` and `q = E[(2p-1)^2]`,
//!   response sampling, and a data-driven estimate of `q`.
//! * [`allocation`] — random `(l, r)`-regular bipartite assignment graphs
//!   from the configuration model (with multi-edge repair), an adaptive
//!   grouping scheme for crowds with perfect workers, and the incremental
//!   quality-doubling design for unknown `q`.
//! * [`inference`] — the iterative message-passing estimator plus majority
//!   voting, one-coin EM, power-iteration spectral inference, and the
//!   oracle maximum-likelihood decoder.
//! * [`theory`] — every closed form: sub-Gaussian variance parameters, error
//!   bounds, sufficient and necessary budgets, minimax lower bounds,
//!   density-evolution moment recursions, and a tree-sampled Monte Carlo
//!   oracle for the message distribution.
//! * [`montecarlo`] — a seeded, parallel experiment harness with CSV output.
//! * [`io`] / [`config`] — file formats and experiment configs for the CLI.
//!
//! Everything is deterministic given the seeds: sampling operations are pure
//! functions of their inputs and random source, and the harness derives
//! per-trial seeds by hashing, so cells can be reproduced in isolation.
//!
//! # Example
//!
//! ```
//! use crowdsim::*;
//! use rand::SeedableRng;
//!
//! # fn main() -> crowdsim::Result<()> {
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
//! let model = WorkerModel::spammer_hammer(0.6)?;
//! let graph = build_configuration_graph(60, 6, 6, &mut rng)?;
//! let truth = GroundTruth::sample_uniform(graph.m(), &mut rng);
//! let workers = sample_workers(&model, graph.n(), &mut rng)?;
//! let responses = sample_responses(&graph, &truth, &workers, &mut rng)?;
//! let k = default_k_max(graph.l(), graph.r(), &model.crowd_stats()?);
//! let result = iterative_infer(&graph, &responses, k, &mut rng)?;
//! assert!(truth.error_fraction(&result.estimates) < 0.2);
//! # Ok(())
//! # }
//! ```

pub mod allocation;
pub mod config;
pub mod error;
pub mod inference;
pub mod io;
pub mod montecarlo;
pub mod theory;
pub mod workers;

pub use allocation::{
    adaptive_spammer_hammer, build_configuration_graph, empirical_tree_probability,
    incremental_q_design, AdaptiveRunResult, AssignmentGraph, GroundTruth,
    IncrementalDesignOptions, IncrementalRunResult,
};
pub use error::{Error, Result};
pub use inference::{
    default_k_max, em_infer, iterative_infer, iterative_infer_with_init, majority_vote, oracle_ml,
    spectral_infer, spectral_infer_with_init, EmOptions, InferenceResult, MessageState,
    ResponseMatrix,
};
pub use montecarlo::{
    exponential_decay_check, mix_seed, run_trial, sweep, Algorithm, ExperimentConfig, KPolicy,
    RPolicy, SweepResult, TruthMode,
};
pub use theory::{
    adaptive_grouping_error_bound, convergence_point, de_moments, de_monte_carlo,
    iterative_error_bound, local_tree_failure_bound, minimax_lower_bounds, one_step_error_bound,
    sigma_inf_sq, sigma_k_sq, sufficient_budget, theory_report, TheoryParams, TheoryReport,
};
pub use workers::{
    estimate_q_from_data, sample_responses, sample_workers, CrowdStats, WorkerModel, WorkerSample,
};
