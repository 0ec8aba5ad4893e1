//! End-to-end checks of the `crowdsim` binary: exit codes, file round trips,
//! and a small simulate -> infer pipeline.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn crowdsim(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crowdsim"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn generate_counts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let out = crowdsim(
        &[
            "generate", "--m", "4", "--l", "2", "--r", "2", "--seed", "1", "--out", "g.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("g.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# m=4 n=4 l=2 r=2 seed=1"));
    assert_eq!(lines[1], "task_id,worker_id");
    assert_eq!(lines.len(), 2 + 8, "metadata + header + 8 edges");

    let out = crowdsim(
        &[
            "generate", "--m", "4", "--l", "2", "--r", "2", "--seed", "1", "--out", "g2.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    assert_eq!(text, fs::read_to_string(dir.path().join("g2.csv")).unwrap());
}

#[test]
fn generate_rejects_indivisible_budget() {
    let dir = tempfile::tempdir().unwrap();
    let out = crowdsim(
        &[
            "generate", "--m", "10", "--l", "3", "--r", "4", "--seed", "1", "--out", "g.csv",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    let err = stderr(&out);
    assert!(err.starts_with("error: "), "{err}");
    assert!(err.contains("divisible"), "{err}");
}

#[test]
fn missing_flag_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = crowdsim(&["generate", "--m", "4", "--l", "2"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_then_infer_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = crowdsim(
        &[
            "simulate",
            "--m",
            "200",
            "--l",
            "7",
            "--r",
            "7",
            "--seed",
            "3",
            "--model",
            "fixed",
            "--p",
            "1.0",
            "--out-dir",
            "data",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    for file in ["graph.csv", "responses.csv", "truth.csv", "reliability.csv"] {
        assert!(
            dir.path().join("data").join(file).exists(),
            "{file} missing"
        );
    }
    for algorithm in ["majority", "iterative", "em", "spectral", "oracle"] {
        let mut args = vec![
            "infer",
            "--graph",
            "data/graph.csv",
            "--responses",
            "data/responses.csv",
            "--algorithm",
            algorithm,
            "--truth",
            "data/truth.csv",
            "--k",
            "5",
        ];
        if algorithm == "oracle" {
            args.extend_from_slice(&["--reliability", "data/reliability.csv"]);
        }
        let out = crowdsim(&args, dir.path());
        assert!(out.status.success(), "{algorithm}: {}", stderr(&out));
        // Perfect workers: every algorithm is exact.
        assert!(
            stderr(&out).contains("error_rate = 0"),
            "{algorithm}: {}",
            stderr(&out)
        );
        assert!(stdout(&out).starts_with("task_id,estimate,decision_value\n"));
    }
}

#[test]
fn simulate_accepts_mixture_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = crowdsim(
        &[
            "simulate",
            "--m",
            "50",
            "--l",
            "4",
            "--r",
            "4",
            "--model",
            "mixture",
            "--ps",
            "0.5,0.9",
            "--weights",
            "0.6,0.4",
            "--out-dir",
            "mix",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("mix/responses.csv").exists());
}

#[test]
fn infer_majority_matches_hand_computed_signs() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("graph.csv"),
        "# m=1 n=3 l=3 r=1 seed=0\ntask_id,worker_id\n0,0\n0,1\n0,2\n",
    )
    .unwrap();
    fs::write(
        dir.path().join("responses.csv"),
        "task_id,worker_id,answer\n0,0,+1\n0,1,1\n0,2,-1\n",
    )
    .unwrap();
    let out = crowdsim(
        &[
            "infer",
            "--graph",
            "graph.csv",
            "--responses",
            "responses.csv",
            "--algorithm",
            "majority",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out), "task_id,estimate,decision_value\n0,1,1\n");
}

#[test]
fn oracle_without_reliability_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("graph.csv"),
        "# m=1 n=3 l=3 r=1 seed=0\ntask_id,worker_id\n0,0\n0,1\n0,2\n",
    )
    .unwrap();
    fs::write(
        dir.path().join("responses.csv"),
        "task_id,worker_id,answer\n0,0,1\n0,1,1\n0,2,-1\n",
    )
    .unwrap();
    let out = crowdsim(
        &[
            "infer",
            "--graph",
            "graph.csv",
            "--responses",
            "responses.csv",
            "--algorithm",
            "oracle",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--reliability"));
}

#[test]
fn off_edge_response_is_rejected_with_row() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("graph.csv"),
        "# m=2 n=2 l=2 r=2 seed=0\ntask_id,worker_id\n0,0\n0,1\n1,0\n1,1\n",
    )
    .unwrap();
    // Row 3 names the pair (1,2), which is not in the graph.
    fs::write(
        dir.path().join("responses.csv"),
        "task_id,worker_id,answer\n0,0,1\n1,2,1\n1,0,1\n1,1,-1\n",
    )
    .unwrap();
    let out = crowdsim(
        &[
            "infer",
            "--graph",
            "graph.csv",
            "--responses",
            "responses.csv",
            "--algorithm",
            "majority",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    let err = stderr(&out);
    assert!(err.contains("line 3"), "{err}");
    assert!(err.contains("not an edge"), "{err}");
}

#[test]
fn bad_answer_value_is_rejected_with_row() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("graph.csv"),
        "# m=1 n=3 l=3 r=1 seed=0\ntask_id,worker_id\n0,0\n0,1\n0,2\n",
    )
    .unwrap();
    fs::write(
        dir.path().join("responses.csv"),
        "task_id,worker_id,answer\n0,0,1\n0,1,0\n0,2,-1\n",
    )
    .unwrap();
    let out = crowdsim(
        &[
            "infer",
            "--graph",
            "graph.csv",
            "--responses",
            "responses.csv",
            "--algorithm",
            "majority",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    let err = stderr(&out);
    assert!(err.contains("line 3") && err.contains("not ±1"), "{err}");
}

#[test]
fn theory_subcommand_prints_report_fields() {
    let dir = tempfile::tempdir().unwrap();
    let out = crowdsim(
        &["theory", "--q", "0.3", "--l", "30", "--r", "30"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(
        text.contains("sigma_inf_sq             = 3.156647"),
        "{text}"
    );
    assert!(text.contains("budget_recommended"), "{text}");

    let out = crowdsim(
        &[
            "theory", "--q", "0.3", "--l", "5", "--r", "5", "--csv", "--l-list", "5,10,15",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    assert_eq!(stdout(&out).lines().count(), 4, "header + 3 rows");
}

#[test]
fn theory_rejects_out_of_range_q() {
    let dir = tempfile::tempdir().unwrap();
    let out = crowdsim(
        &["theory", "--q", "1.5", "--l", "5", "--r", "5"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn sweep_from_config_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("exp.cfg"),
        "[sweep]\nm = 60\nl = 3,5\nr = equal\nk = 4\ntrials = 3\nseed = 9\nalgorithms = iterative,majority\n\n[model]\nkind = spammer-hammer\nq = 0.4\n",
    )
    .unwrap();
    let out = crowdsim(
        &["sweep", "--config", "exp.cfg", "--out", "result.csv"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("result.csv")).unwrap();
    assert!(csv.starts_with("l,r,m,algorithm,mean_error,std_error,trials\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 2, "two cells x two algorithms");

    // Same config, same bytes.
    let out = crowdsim(
        &["sweep", "--config", "exp.cfg", "--out", "result2.csv"],
        dir.path(),
    );
    assert!(out.status.success());
    assert_eq!(
        csv,
        fs::read_to_string(dir.path().join("result2.csv")).unwrap()
    );
}

#[test]
fn sweep_config_error_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("exp.cfg"),
        "[sweep]\nm = 60\nl = 3\nwhatever = 1\n\n[model]\nkind = haldane\n",
    )
    .unwrap();
    let out = crowdsim(&["sweep", "--config", "exp.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    let err = stderr(&out);
    assert!(err.contains("line 4") && err.contains("whatever"), "{err}");
}

#[test]
fn adaptive_subcommand_reports_bound() {
    let dir = tempfile::tempdir().unwrap();
    let out = crowdsim(
        &[
            "adaptive", "--m", "400", "--l", "6", "--q", "0.5", "--trials", "100", "--seed", "4",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("error_bound     = 0.01500"), "{text}");
    let mean_error: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("mean_error      = "))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(mean_error <= 0.0150, "mean error {mean_error}");
}

#[test]
fn adaptive_rejects_insufficient_budget() {
    let dir = tempfile::tempdir().unwrap();
    let out = crowdsim(
        &[
            "adaptive", "--m", "400", "--l", "4", "--q", "0.5", "--trials", "10",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("2/q"), "{}", stderr(&out));
}
