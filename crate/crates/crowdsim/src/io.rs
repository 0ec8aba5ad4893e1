//! CSV file formats.
//!
//! * graph: a `#`-prefixed metadata line, a column header, then 0-based
//!   `task_id,worker_id` rows in edge order:
//!
//!   ```text
//!   # m=4 n=4 l=2 r=2 seed=1
//!   task_id,worker_id
//!   0,1
//!   ```
//!
//! * responses: `task_id,worker_id,answer` with `answer ∈ {+1,-1}`
//! * truth: `task_id,t`; reliabilities: `worker_id,p`
//! * inference results: `task_id,estimate,decision_value`
//!
//! Graph and response files round-trip field-exactly.

use std::fs;
use std::path::Path;

use crate::allocation::{AssignmentGraph, GroundTruth};
use crate::error::{Error, Result};
use crate::inference::{InferenceResult, ResponseMatrix};
use crate::workers::WorkerSample;

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

pub fn graph_to_string(graph: &AssignmentGraph, seed: u64) -> String {
    let mut out = format!(
        "# m={} n={} l={} r={} seed={}\ntask_id,worker_id\n",
        graph.m(),
        graph.n(),
        graph.l(),
        graph.r(),
        seed
    );
    for (t, w) in graph.edges() {
        out.push_str(&format!("{t},{w}\n"));
    }
    out
}

pub fn write_graph_file(path: &Path, graph: &AssignmentGraph, seed: u64) -> Result<()> {
    fs::write(path, graph_to_string(graph, seed))?;
    Ok(())
}

/// Parses a graph file; returns the graph and the seed recorded in the
/// metadata line.
pub fn parse_graph(text: &str) -> Result<(AssignmentGraph, u64)> {
    let mut lines = text.lines().enumerate();
    let (_, meta) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty graph file"))?;
    let meta = meta
        .strip_prefix('#')
        .ok_or_else(|| parse_err(1, "expected '# m=.. n=.. l=.. r=.. seed=..' metadata line"))?;
    let mut m = None;
    let mut n = None;
    let mut l = None;
    let mut r = None;
    let mut seed = None;
    for token in meta.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| parse_err(1, format!("bad metadata token '{token}'")))?;
        let parsed: u64 = value
            .parse()
            .map_err(|_| parse_err(1, format!("bad integer '{value}' for '{key}'")))?;
        match key {
            "m" => m = Some(parsed as usize),
            "n" => n = Some(parsed as usize),
            "l" => l = Some(parsed as usize),
            "r" => r = Some(parsed as usize),
            "seed" => seed = Some(parsed),
            other => return Err(parse_err(1, format!("unknown metadata key '{other}'"))),
        }
    }
    let (m, n, l, r) = match (m, n, l, r) {
        (Some(m), Some(n), Some(l), Some(r)) => (m, n, l, r),
        _ => return Err(parse_err(1, "metadata must define m, n, l, r")),
    };
    let (line_no, header) = lines
        .next()
        .ok_or_else(|| parse_err(2, "missing column header"))?;
    if header.trim() != "task_id,worker_id" {
        return Err(parse_err(
            line_no + 1,
            "expected header 'task_id,worker_id'",
        ));
    }
    let mut edges = Vec::with_capacity(m * l);
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (t, w) = line
            .split_once(',')
            .ok_or_else(|| parse_err(line_no, "expected 'task_id,worker_id'"))?;
        let t: u32 = t
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad task id '{t}'")))?;
        let w: u32 = w
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad worker id '{w}'")))?;
        edges.push((t, w));
    }
    let graph = AssignmentGraph::from_edges(m, n, l, r, &edges)?;
    Ok((graph, seed.unwrap_or(0)))
}

pub fn read_graph_file(path: &Path) -> Result<(AssignmentGraph, u64)> {
    parse_graph(&fs::read_to_string(path)?)
}

pub fn responses_to_string(responses: &ResponseMatrix) -> String {
    let mut out = String::from("task_id,worker_id,answer\n");
    for &(t, w, a) in responses.entries() {
        out.push_str(&format!("{t},{w},{a}\n"));
    }
    out
}

pub fn write_responses_file(path: &Path, responses: &ResponseMatrix) -> Result<()> {
    fs::write(path, responses_to_string(responses))?;
    Ok(())
}

fn parse_answer(raw: &str, line_no: usize) -> Result<i8> {
    match raw.trim() {
        "1" | "+1" => Ok(1),
        "-1" => Ok(-1),
        other => Err(parse_err(line_no, format!("answer '{other}' is not ±1"))),
    }
}

/// Parses response triplets; pair with graph dimensions via
/// [`ResponseMatrix::from_triplets`].
pub fn parse_responses(text: &str) -> Result<Vec<(u32, u32, i8)>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty responses file"))?;
    if header.trim() != "task_id,worker_id,answer" {
        return Err(parse_err(1, "expected header 'task_id,worker_id,answer'"));
    }
    let mut entries = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let t = fields.next().unwrap_or("");
        let w = fields
            .next()
            .ok_or_else(|| parse_err(line_no, "expected 3 fields"))?;
        let a = fields
            .next()
            .ok_or_else(|| parse_err(line_no, "expected 3 fields"))?;
        if fields.next().is_some() {
            return Err(parse_err(line_no, "expected exactly 3 fields"));
        }
        let t: u32 = t
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad task id '{t}'")))?;
        let w: u32 = w
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad worker id '{w}'")))?;
        entries.push((t, w, parse_answer(a, line_no)?));
    }
    Ok(entries)
}

pub fn read_responses_file(path: &Path) -> Result<Vec<(u32, u32, i8)>> {
    parse_responses(&fs::read_to_string(path)?)
}

pub fn truth_to_string(truth: &GroundTruth) -> String {
    let mut out = String::from("task_id,t\n");
    for (i, t) in truth.t.iter().enumerate() {
        out.push_str(&format!("{i},{t}\n"));
    }
    out
}

pub fn write_truth_file(path: &Path, truth: &GroundTruth) -> Result<()> {
    fs::write(path, truth_to_string(truth))?;
    Ok(())
}

/// Parses a truth file covering each of the `m` tasks exactly once.
pub fn parse_truth(text: &str, m: usize) -> Result<GroundTruth> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty truth file"))?;
    if header.trim() != "task_id,t" {
        return Err(parse_err(1, "expected header 'task_id,t'"));
    }
    let mut values = vec![0i8; m];
    let mut seen = vec![false; m];
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (t, v) = line
            .split_once(',')
            .ok_or_else(|| parse_err(line_no, "expected 'task_id,t'"))?;
        let t: usize = t
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad task id '{t}'")))?;
        if t >= m {
            return Err(parse_err(
                line_no,
                format!("task id {t} out of range (m={m})"),
            ));
        }
        if seen[t] {
            return Err(parse_err(line_no, format!("duplicate task id {t}")));
        }
        seen[t] = true;
        values[t] = parse_answer(v, line_no)?;
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(parse_err(
            1,
            format!("truth file is missing task {missing}"),
        ));
    }
    GroundTruth::from_values(values)
}

pub fn read_truth_file(path: &Path, m: usize) -> Result<GroundTruth> {
    parse_truth(&fs::read_to_string(path)?, m)
}

pub fn reliability_to_string(workers: &WorkerSample) -> String {
    let mut out = String::from("worker_id,p\n");
    for (j, p) in workers.p.iter().enumerate() {
        out.push_str(&format!("{j},{p}\n"));
    }
    out
}

pub fn write_reliability_file(path: &Path, workers: &WorkerSample) -> Result<()> {
    fs::write(path, reliability_to_string(workers))?;
    Ok(())
}

/// Parses per-worker reliabilities covering each of the `n` workers once.
pub fn parse_reliability(text: &str, n: usize) -> Result<WorkerSample> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty reliability file"))?;
    if header.trim() != "worker_id,p" {
        return Err(parse_err(1, "expected header 'worker_id,p'"));
    }
    let mut values = vec![0.0f64; n];
    let mut seen = vec![false; n];
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (j, p) = line
            .split_once(',')
            .ok_or_else(|| parse_err(line_no, "expected 'worker_id,p'"))?;
        let j: usize = j
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad worker id '{j}'")))?;
        if j >= n {
            return Err(parse_err(
                line_no,
                format!("worker id {j} out of range (n={n})"),
            ));
        }
        if seen[j] {
            return Err(parse_err(line_no, format!("duplicate worker id {j}")));
        }
        let p: f64 = p
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad reliability '{p}'")))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(parse_err(line_no, format!("reliability {p} outside [0,1]")));
        }
        seen[j] = true;
        values[j] = p;
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(parse_err(
            1,
            format!("reliability file is missing worker {missing}"),
        ));
    }
    Ok(WorkerSample { p: values })
}

pub fn read_reliability_file(path: &Path, n: usize) -> Result<WorkerSample> {
    parse_reliability(&fs::read_to_string(path)?, n)
}

pub fn results_to_string(result: &InferenceResult) -> String {
    let mut out = String::from("task_id,estimate,decision_value\n");
    for (i, (e, d)) in result
        .estimates
        .iter()
        .zip(&result.decision_values)
        .enumerate()
    {
        out.push_str(&format!("{i},{e},{d}\n"));
    }
    out
}

pub fn write_results_file(path: &Path, result: &InferenceResult) -> Result<()> {
    fs::write(path, results_to_string(result))?;
    Ok(())
}
