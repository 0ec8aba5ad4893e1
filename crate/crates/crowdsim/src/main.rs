//! Command-line front end: graph generation, simulation, inference, the
//! theory report, config-driven sweeps, and the adaptive allocation demo.
//!
//! Exit codes: 0 success, 2 usage error, 3 validation/parse error, 4 runtime
//! failure. Every rejection prints a single `error: ...` line on stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crowdsim::config::parse_sweep_config;
use crowdsim::error::{Error, Result};
use crowdsim::{
    adaptive_grouping_error_bound, adaptive_spammer_hammer, build_configuration_graph,
    default_k_max, em_infer, estimate_q_from_data, io, iterative_infer, majority_vote, mix_seed,
    oracle_ml, sample_responses, sample_workers, spectral_infer, sweep, theory_report, Algorithm,
    CrowdStats, EmOptions, GroundTruth, ResponseMatrix, TheoryParams, WorkerModel,
};

#[derive(Parser)]
#[command(
    name = "crowdsim",
    version,
    about = "Budget-optimal crowdsourcing: task allocation, inference, theory, and experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random (l,r)-regular assignment graph as an edge-list CSV.
    Generate {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        l: usize,
        #[arg(long)]
        r: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output path for the edge list.
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a full dataset: graph, truth, worker sample, and responses.
    Simulate {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        l: usize,
        #[arg(long)]
        r: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Worker prior: spammer-hammer | beta | fixed | haldane | mixture.
        #[arg(long, default_value = "spammer-hammer")]
        model: String,
        /// Hammer probability for the spammer-hammer prior.
        #[arg(long)]
        q: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        /// Reliability for the fixed prior.
        #[arg(long)]
        p: Option<f64>,
        /// Mixture support points, comma separated.
        #[arg(long)]
        ps: Option<String>,
        /// Mixture weights, comma separated.
        #[arg(long)]
        weights: Option<String>,
        /// Truth mode: uniform | ones.
        #[arg(long, default_value = "uniform")]
        truth: String,
        /// Directory for graph.csv, responses.csv, truth.csv, reliability.csv.
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
    },
    /// Run one inference algorithm over a graph file and a responses file.
    Infer {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        responses: PathBuf,
        /// iterative | majority | em | spectral | oracle.
        #[arg(long)]
        algorithm: String,
        /// Iterations for the iterative algorithm (default: closed-form k0
        /// for the data-estimated quality).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 30)]
        power_iters: usize,
        /// Per-worker reliability CSV; required by the oracle.
        #[arg(long)]
        reliability: Option<PathBuf>,
        /// Truth CSV; when given, the error rate is printed on stderr.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Results CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print every closed-form quantity for a parameter point.
    Theory {
        #[arg(long)]
        q: f64,
        /// Effective first moment; defaults to q (the spammer-hammer value).
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        l: usize,
        #[arg(long)]
        r: usize,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
        /// Emit one CSV row per l instead of the key-value report.
        #[arg(long)]
        csv: bool,
        /// Sweep these l values (comma separated) in CSV mode.
        #[arg(long)]
        l_list: Option<String>,
    },
    /// Run a parameter sweep described by a config file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the output path named in the config (stdout if neither).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the adaptive grouping scheme on a spammer-hammer crowd and
    /// compare the empirical error with its closed-form bound.
    Adaptive {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        l: usize,
        #[arg(long)]
        q: f64,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Pad the last group when m is not a perfect square.
        #[arg(long)]
        allow_padding: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn usage_exit(msg: &str) -> ! {
    eprintln!("error: {msg}");
    std::process::exit(2);
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate { m, l, r, seed, out } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let graph = build_configuration_graph(m, l, r, &mut rng)?;
            io::write_graph_file(&out, &graph, seed)?;
            eprintln!("wrote {} edges to {}", graph.edge_count(), out.display());
            Ok(())
        }
        Command::Simulate {
            m,
            l,
            r,
            seed,
            model,
            q,
            alpha,
            beta,
            p,
            ps,
            weights,
            truth,
            out_dir,
        } => {
            let model =
                model_from_flags(&model, q, alpha, beta, p, ps.as_deref(), weights.as_deref())?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let graph = build_configuration_graph(m, l, r, &mut rng)?;
            let truth = match truth.to_ascii_lowercase().as_str() {
                "uniform" => GroundTruth::sample_uniform(m, &mut rng),
                "ones" => GroundTruth::all_ones(m),
                other => {
                    return Err(Error::InvalidInput(format!(
                        "truth must be uniform or ones, got '{other}'"
                    )))
                }
            };
            let workers = sample_workers(&model, graph.n(), &mut rng)?;
            let responses = sample_responses(&graph, &truth, &workers, &mut rng)?;
            std::fs::create_dir_all(&out_dir)?;
            io::write_graph_file(&out_dir.join("graph.csv"), &graph, seed)?;
            io::write_responses_file(&out_dir.join("responses.csv"), &responses)?;
            io::write_truth_file(&out_dir.join("truth.csv"), &truth)?;
            io::write_reliability_file(&out_dir.join("reliability.csv"), &workers)?;
            eprintln!(
                "wrote graph/responses/truth/reliability under {} (m={m}, n={}, l={l}, r={r})",
                out_dir.display(),
                graph.n()
            );
            Ok(())
        }
        Command::Infer {
            graph,
            responses,
            algorithm,
            k,
            power_iters,
            reliability,
            truth,
            seed,
            out,
        } => {
            let algorithm: Algorithm = algorithm.parse()?;
            if algorithm == Algorithm::Oracle && reliability.is_none() {
                usage_exit("the oracle needs --reliability <worker_id,p CSV>");
            }
            let (graph, _) = io::read_graph_file(&graph)?;
            let entries = io::read_responses_file(&responses)?;
            // Diagnose off-edge rows here so the message carries the file row
            // (entry i sits on row i + 2: one column header line above it).
            let edge_set: std::collections::HashSet<(u32, u32)> =
                graph.edges().map(|(t, w)| (t as u32, w as u32)).collect();
            for (idx, &(t, w, _)) in entries.iter().enumerate() {
                if !edge_set.contains(&(t, w)) {
                    return Err(Error::Parse {
                        line: idx + 2,
                        msg: format!("response ({t},{w}) is not an edge of the graph"),
                    });
                }
            }
            let responses = ResponseMatrix::from_triplets(graph.m(), graph.n(), entries);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let result = match algorithm {
                Algorithm::Iterative => {
                    let k = match k {
                        Some(k) => k,
                        // Without crowd moments, estimate q from the data and
                        // size the iteration count for the worst-case mu = q.
                        None => {
                            let q_hat = estimate_q_from_data(&responses, &graph)?;
                            default_k_max(
                                graph.l(),
                                graph.r(),
                                &CrowdStats {
                                    mu: q_hat,
                                    q: q_hat,
                                },
                            )
                        }
                    };
                    iterative_infer(&graph, &responses, k, &mut rng)?
                }
                Algorithm::Majority => majority_vote(&graph, &responses, &mut rng)?,
                Algorithm::Em => em_infer(&graph, &responses, &EmOptions::default(), &mut rng)?,
                Algorithm::Spectral => spectral_infer(&graph, &responses, power_iters, &mut rng)?,
                Algorithm::Oracle => {
                    let workers =
                        io::read_reliability_file(&reliability.expect("checked above"), graph.n())?;
                    oracle_ml(&graph, &responses, &workers, &mut rng)?
                }
            };
            match &out {
                Some(path) => io::write_results_file(path, &result)?,
                None => print!("{}", io::results_to_string(&result)),
            }
            if let Some(truth_path) = truth {
                let truth = io::read_truth_file(&truth_path, graph.m())?;
                eprintln!("error_rate = {}", truth.error_fraction(&result.estimates));
            }
            Ok(())
        }
        Command::Theory {
            q,
            mu,
            l,
            r,
            m,
            k,
            eps,
            csv,
            l_list,
        } => {
            let mu = mu.unwrap_or(q);
            let l_values: Vec<usize> = match l_list {
                Some(list) => list
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse()
                            .map_err(|_| Error::InvalidInput(format!("bad l value '{s}'")))
                    })
                    .collect::<Result<_>>()?,
                None => vec![l],
            };
            if csv {
                println!(
                    "l,r,q,mu,k,phase_margin,sigma_k_sq,sigma_inf_sq,k0,m0,error_bound_total,one_step_bound,\
                     budget_recommended,lower_oracle,lower_adaptive,necessary_budget_nonadaptive,necessary_budget_adaptive"
                );
            }
            for l in l_values {
                let params = TheoryParams::new(l, r, q, mu)?;
                let report = theory_report(&params, m, k, eps)?;
                if csv {
                    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
                    println!(
                        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                        l,
                        r,
                        q,
                        mu,
                        report.k,
                        report.phase_margin,
                        opt(report.sigma_k_sq),
                        opt(report.sigma_inf_sq),
                        report.k0.map_or(String::new(), |k| k.to_string()),
                        opt(report.m0),
                        opt(report.error_bound.as_ref().map(|b| b.total)),
                        report.one_step_bound,
                        report.budget.recommended,
                        report.lower_bounds.oracle_nonadaptive.value,
                        report.lower_bounds.adaptive_minimax.value,
                        report.lower_bounds.necessary_budget_nonadaptive,
                        report.lower_bounds.necessary_budget_adaptive,
                    );
                } else {
                    print!("{report}");
                }
            }
            Ok(())
        }
        Command::Sweep { config, out } => {
            let text = std::fs::read_to_string(&config)?;
            let spec = parse_sweep_config(&text)?;
            let result = sweep(&spec.config)?;
            for failure in &result.failures {
                eprintln!(
                    "cell l={} r={} failed: {}",
                    failure.l, failure.r, failure.message
                );
            }
            let csv = result.to_csv();
            match out.or(spec.output.map(PathBuf::from)) {
                Some(path) => {
                    std::fs::write(&path, csv)?;
                    eprintln!("wrote {} rows to {}", result.rows.len(), path.display());
                }
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::Adaptive {
            m,
            l,
            q,
            trials,
            seed,
            allow_padding,
        } => {
            if trials == 0 {
                return Err(Error::InvalidInput("trials must be at least 1".into()));
            }
            let model = WorkerModel::spammer_hammer(q)?;
            let mut total_error = 0.0;
            let mut total_queries = 0usize;
            for trial in 0..trials {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xADA7, trial as u64));
                let truth = GroundTruth::sample_uniform(m, &mut rng);
                let run = adaptive_spammer_hammer(&truth, l, &model, allow_padding, &mut rng)?;
                total_error += truth.error_fraction(&run.estimates);
                total_queries += run.queries_used;
            }
            println!("trials          = {trials}");
            println!("mean_error      = {}", total_error / trials as f64);
            println!(
                "error_bound     = {}",
                adaptive_grouping_error_bound(m, l, q)
            );
            println!("mean_queries    = {}", total_queries as f64 / trials as f64);
            println!("query_budget    = {}", m * l);
            Ok(())
        }
    }
}

fn parse_f64_list(raw: &str, what: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad {what} '{s}'")))
        })
        .collect()
}

fn model_from_flags(
    kind: &str,
    q: Option<f64>,
    alpha: Option<f64>,
    beta: Option<f64>,
    p: Option<f64>,
    ps: Option<&str>,
    weights: Option<&str>,
) -> Result<WorkerModel> {
    match kind.to_ascii_lowercase().as_str() {
        "spammer-hammer" | "spammer_hammer" => {
            let q = q.unwrap_or_else(|| usage_exit("spammer-hammer model needs --q"));
            WorkerModel::spammer_hammer(q)
        }
        "beta" => {
            let alpha = alpha.unwrap_or_else(|| usage_exit("beta model needs --alpha and --beta"));
            let beta = beta.unwrap_or_else(|| usage_exit("beta model needs --alpha and --beta"));
            WorkerModel::beta(alpha, beta)
        }
        "fixed" => {
            let p = p.unwrap_or_else(|| usage_exit("fixed model needs --p"));
            WorkerModel::fixed_p(p)
        }
        "haldane" => Ok(WorkerModel::haldane()),
        "mixture" => {
            let ps = ps.unwrap_or_else(|| usage_exit("mixture model needs --ps and --weights"));
            let weights =
                weights.unwrap_or_else(|| usage_exit("mixture model needs --ps and --weights"));
            let ps = parse_f64_list(ps, "support point")?;
            let ws = parse_f64_list(weights, "weight")?;
            if ps.len() != ws.len() {
                return Err(Error::InvalidInput(format!(
                    "{} support points vs {} weights",
                    ps.len(),
                    ws.len()
                )));
            }
            WorkerModel::finite_mixture(ps.into_iter().zip(ws).collect())
        }
        other => Err(Error::InvalidInput(format!("unknown model kind '{other}'"))),
    }
}
