//! Flat TOML run configuration. Every key is optional; command-line flags
//! take precedence over file values, which take precedence over defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use sketchnewton::newton::{CalibrationPolicy, SolverConfig};
use sketchnewton::sketching::SketchDistribution;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Ridge,
    Logistic,
    Quadratic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    Auto,
    Once,
    EveryRound,
}

/// Mirrors the TOML file; unknown keys are rejected.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub task: Option<Task>,
    pub data: Option<PathBuf>,
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub noise_sd: Option<f64>,
    pub lambda: Option<f64>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub sketch: Option<String>,
    pub q: Option<usize>,
    pub m0: Option<usize>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub max_iters: Option<usize>,
    pub grad_tol: Option<f64>,
    pub decrement_tol: Option<f64>,
    pub max_linesearch_steps: Option<usize>,
    pub policy: Option<Policy>,
    pub drop_degenerate: Option<bool>,
    pub trials: Option<usize>,
    pub scale: Option<bool>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).context("invalid config file")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Fills every unset field of `self` from `lower`.
    pub fn or(self, lower: FileConfig) -> FileConfig {
        FileConfig {
            task: self.task.or(lower.task),
            data: self.data.or(lower.data),
            n: self.n.or(lower.n),
            d: self.d.or(lower.d),
            noise_sd: self.noise_sd.or(lower.noise_sd),
            lambda: self.lambda.or(lower.lambda),
            seed: self.seed.or(lower.seed),
            output: self.output.or(lower.output),
            sketch: self.sketch.or(lower.sketch),
            q: self.q.or(lower.q),
            m0: self.m0.or(lower.m0),
            a: self.a.or(lower.a),
            b: self.b.or(lower.b),
            max_iters: self.max_iters.or(lower.max_iters),
            grad_tol: self.grad_tol.or(lower.grad_tol),
            decrement_tol: self.decrement_tol.or(lower.decrement_tol),
            max_linesearch_steps: self.max_linesearch_steps.or(lower.max_linesearch_steps),
            policy: self.policy.or(lower.policy),
            drop_degenerate: self.drop_degenerate.or(lower.drop_degenerate),
            trials: self.trials.or(lower.trials),
            scale: self.scale.or(lower.scale),
        }
    }
}

/// Where the design matrix comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    File(PathBuf),
    Synthetic {
        n: usize,
        d: usize,
        noise_sd: Option<f64>,
    },
}

/// A validated configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub task: Task,
    pub data: DataSource,
    pub lambda: f64,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub solver: SolverConfig,
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        bail!("invalid value for `{name}`: must be positive, got {v}")
    }
}

fn nonzero(name: &str, v: usize) -> Result<usize> {
    if v == 0 {
        bail!("invalid value for `{name}`: must be at least 1")
    }
    Ok(v)
}

pub fn parse_sketch(s: &str) -> Result<SketchDistribution> {
    s.parse::<SketchDistribution>()
        .map_err(|e| anyhow::anyhow!("invalid value for `sketch`: {e}"))
}

impl RunConfig {
    pub fn from_file_config(f: FileConfig) -> Result<Self> {
        let defaults = SolverConfig::default();
        let task = f.task.unwrap_or(Task::Ridge);
        let lambda = positive("lambda", f.lambda.unwrap_or(1e-3))?;
        let data = match f.data {
            Some(path) => DataSource::File(path),
            None => {
                let n = nonzero("n", f.n.unwrap_or(2000))?;
                let d = nonzero("d", f.d.unwrap_or(200))?;
                if n < d {
                    bail!(
                        "invalid value for `n`: synthetic data needs n >= d, got n = {n}, d = {d}"
                    );
                }
                let noise_sd = match f.noise_sd {
                    Some(v) if !(v >= 0.0 && v.is_finite()) => {
                        bail!("invalid value for `noise_sd`: must be non-negative, got {v}")
                    }
                    other => other,
                };
                DataSource::Synthetic { n, d, noise_sd }
            }
        };
        let a = f.a.unwrap_or(defaults.a);
        if !(a > 0.0 && a < 1.0) {
            bail!("invalid value for `a`: must lie in (0, 1), got {a}");
        }
        let b = f.b.unwrap_or(defaults.b);
        if !(b > 0.0 && b < 1.0) {
            bail!("invalid value for `b`: must lie in (0, 1), got {b}");
        }
        let seed = f.seed.unwrap_or(0);
        let dist = match f.sketch.as_deref() {
            Some(s) => parse_sketch(s)?,
            None => defaults.dist,
        };
        let solver = SolverConfig {
            a,
            b,
            max_iters: nonzero("max_iters", f.max_iters.unwrap_or(defaults.max_iters))?,
            grad_tol: positive("grad_tol", f.grad_tol.unwrap_or(defaults.grad_tol))?,
            decrement_tol: positive(
                "decrement_tol",
                f.decrement_tol.unwrap_or(defaults.decrement_tol),
            )?,
            max_linesearch_steps: nonzero(
                "max_linesearch_steps",
                f.max_linesearch_steps
                    .unwrap_or(defaults.max_linesearch_steps),
            )?,
            policy: match f.policy.unwrap_or(Policy::Auto) {
                Policy::Auto => None,
                Policy::Once => Some(CalibrationPolicy::Once),
                Policy::EveryRound => Some(CalibrationPolicy::EveryRound),
            },
            q: nonzero("q", f.q.unwrap_or(defaults.q))?,
            dist,
            m0: nonzero("m0", f.m0.unwrap_or(defaults.m0))?,
            master_seed: seed,
            debias: true,
            drop_degenerate: f.drop_degenerate.unwrap_or(false),
        };
        Ok(RunConfig {
            task,
            data,
            lambda,
            seed,
            output: f.output,
            solver,
        })
    }
}
