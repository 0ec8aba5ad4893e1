//! Experiment config files: `key = value` lines grouped by `[section]`.
//!
//! ```text
//! [sweep]
//! m = 1000
//! l = 1,3,5,7,9,11,13,15,20,25,30
//! r = equal            # equal | <integer> | ratio:<float>
//! k = 20               # auto | <integer>
//! trials = 50
//! seed = 1
//! algorithms = iterative,majority,em,spectral,oracle
//! truth = uniform      # uniform | ones
//! output = fig1.csv
//!
//! [model]
//! kind = spammer-hammer   # spammer-hammer | beta | fixed | haldane | mixture
//! q = 0.3
//! ```
//!
//! Model parameters by kind: `q` (spammer-hammer), `alpha`/`beta` (beta),
//! `p` (fixed), `ps`/`weights` (mixture). Anything after `#` on a line is a
//! comment; unknown sections or keys are rejected with their line number.

use std::collections::HashMap;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::montecarlo::{Algorithm, ExperimentConfig, KPolicy, RPolicy, TruthMode};
use crate::workers::WorkerModel;

/// A parsed sweep config plus the output path it names, if any.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub config: ExperimentConfig,
    pub output: Option<String>,
}

struct RawConfig {
    // (section, key) -> (value, line number)
    values: HashMap<(String, String), (String, usize)>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self> {
        let mut values = HashMap::new();
        let mut section = String::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Parse {
                        line: line_no,
                        msg: format!("unterminated section header '{line}'"),
                    })?
                    .trim();
                section = name.to_ascii_lowercase();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("expected 'key = value', got '{line}'"),
            })?;
            let key = key.trim().to_ascii_lowercase();
            if key.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "empty key".into(),
                });
            }
            if values
                .insert(
                    (section.clone(), key.clone()),
                    (value.trim().to_string(), line_no),
                )
                .is_some()
            {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("duplicate key '{key}' in section '[{section}]'"),
                });
            }
        }
        Ok(RawConfig { values })
    }

    fn take(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        self.values.remove(&(section.to_string(), key.to_string()))
    }

    fn required(&mut self, section: &str, key: &str) -> Result<(String, usize)> {
        self.take(section, key).ok_or_else(|| {
            Error::InvalidInput(format!(
                "config is missing required key '{key}' in section '[{section}]'"
            ))
        })
    }

    fn finish(self) -> Result<()> {
        // Report the earliest leftover key so the diagnostic is stable.
        if let Some(((section, key), (_, line))) =
            self.values.into_iter().min_by_key(|(_, (_, line))| *line)
        {
            return Err(Error::Parse {
                line,
                msg: format!("unknown key '{key}' in section '[{section}]'"),
            });
        }
        Ok(())
    }
}

fn parse_scalar<T: FromStr>(value: &str, line: usize, what: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad {what} '{value}'"),
    })
}

fn parse_list<T: FromStr>(value: &str, line: usize, what: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|item| parse_scalar(item, line, what))
        .collect()
}

pub fn parse_sweep_config(text: &str) -> Result<SweepSpec> {
    let mut raw = RawConfig::parse(text)?;

    let (m, m_line) = raw.required("sweep", "m")?;
    let m: usize = parse_scalar(&m, m_line, "integer")?;
    let (l, l_line) = raw.required("sweep", "l")?;
    let l_values: Vec<usize> = parse_list(&l, l_line, "integer")?;

    let r_policy = match raw.take("sweep", "r") {
        None => RPolicy::EqualL,
        Some((value, line)) => {
            let v = value.to_ascii_lowercase();
            if v == "equal" || v == "l" {
                RPolicy::EqualL
            } else if let Some(ratio) = v.strip_prefix("ratio:") {
                RPolicy::RatioL(parse_scalar(ratio, line, "ratio")?)
            } else {
                RPolicy::Fixed(parse_scalar(&value, line, "integer")?)
            }
        }
    };

    let k_policy = match raw.take("sweep", "k") {
        None => KPolicy::Auto,
        Some((value, line)) => {
            if value.eq_ignore_ascii_case("auto") {
                KPolicy::Auto
            } else {
                KPolicy::Fixed(parse_scalar(&value, line, "integer")?)
            }
        }
    };

    let trials = match raw.take("sweep", "trials") {
        None => 50,
        Some((value, line)) => parse_scalar(&value, line, "integer")?,
    };
    let base_seed = match raw.take("sweep", "seed") {
        None => 1,
        Some((value, line)) => parse_scalar(&value, line, "integer")?,
    };
    let power_iters = match raw.take("sweep", "power_iters") {
        None => 30,
        Some((value, line)) => parse_scalar(&value, line, "integer")?,
    };
    let algorithms = match raw.take("sweep", "algorithms") {
        None => Algorithm::ALL.to_vec(),
        Some((value, _)) => value
            .split(',')
            .map(|name| name.parse::<Algorithm>())
            .collect::<Result<Vec<_>>>()?,
    };
    let truth_mode = match raw.take("sweep", "truth") {
        None => TruthMode::UniformRandom,
        Some((value, line)) => match value.to_ascii_lowercase().as_str() {
            "uniform" => TruthMode::UniformRandom,
            "ones" => TruthMode::AllOnes,
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("truth must be 'uniform' or 'ones', got '{other}'"),
                })
            }
        },
    };
    let output = raw.take("sweep", "output").map(|(value, _)| value);

    let model = parse_model(&mut raw)?;
    raw.finish()?;

    let config = ExperimentConfig {
        m,
        l_values,
        r_policy,
        model,
        truth_mode,
        algorithms,
        k_policy,
        power_iters,
        trials,
        base_seed,
    };
    config.validate()?;
    Ok(SweepSpec { config, output })
}

fn parse_model(raw: &mut RawConfig) -> Result<WorkerModel> {
    let (kind, kind_line) = raw.required("model", "kind")?;
    match kind.to_ascii_lowercase().as_str() {
        "spammer-hammer" | "spammer_hammer" => {
            let (q, line) = raw.required("model", "q")?;
            WorkerModel::spammer_hammer(parse_scalar(&q, line, "probability")?)
        }
        "beta" => {
            let (alpha, a_line) = raw.required("model", "alpha")?;
            let (beta, b_line) = raw.required("model", "beta")?;
            WorkerModel::beta(
                parse_scalar(&alpha, a_line, "shape")?,
                parse_scalar(&beta, b_line, "shape")?,
            )
        }
        "fixed" => {
            let (p, line) = raw.required("model", "p")?;
            WorkerModel::fixed_p(parse_scalar(&p, line, "probability")?)
        }
        "haldane" => Ok(WorkerModel::haldane()),
        "mixture" => {
            let (ps, p_line) = raw.required("model", "ps")?;
            let (ws, w_line) = raw.required("model", "weights")?;
            let ps: Vec<f64> = parse_list(&ps, p_line, "probability")?;
            let ws: Vec<f64> = parse_list(&ws, w_line, "weight")?;
            if ps.len() != ws.len() {
                return Err(Error::Parse {
                    line: w_line,
                    msg: format!("{} ps vs {} weights", ps.len(), ws.len()),
                });
            }
            WorkerModel::finite_mixture(ps.into_iter().zip(ws).collect())
        }
        other => Err(Error::Parse {
            line: kind_line,
            msg: format!("unknown model kind '{other}'"),
        }),
    }
}
