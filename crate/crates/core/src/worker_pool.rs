//! One round of the star topology: `q` workers each sketch the Hessian,
//! pick their own `λ̂`, and send back `Ŵ⁽ᵏ⁾g`; the server averages.
//!
//! Workers run on the rayon pool but are pure functions of
//! `(master_seed, round, k)`, and the average is summed in worker-index
//! order, so a round is bit-identical for any thread count.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::calibration::{choose_lambda_hat, LambdaChoice};
use crate::error::{invalid, Error, Result};
use crate::linalg::{axpy, HessianView};
use crate::seed;
use crate::sketching::{sample_sketch, sketch_hessian, SketchDistribution, SketchedHessian};

#[derive(Clone, Copy, Debug)]
pub struct RoundSpec<'a> {
    pub round: u64,
    /// Full gradient, including the `λθ` term.
    pub gradient: &'a [f64],
    /// Hessian of the data term only; `λ` enters through `λ̂`.
    pub hessian: &'a HessianView,
    pub lambda: f64,
    /// Sketch size broadcast by the server.
    pub m: usize,
    pub dist: SketchDistribution,
    pub q: usize,
    pub master_seed: u64,
    /// When false every worker uses `λ̂ = λ` (the uncorrected estimator).
    pub debias: bool,
    /// Discard workers whose `λ̂` search hit its error branch.
    pub drop_degenerate: bool,
}

impl RoundSpec<'_> {
    fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(invalid("q", "must be at least 1"));
        }
        if self.m == 0 {
            return Err(invalid("m", "must be at least 1"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(invalid(
                "lambda",
                format!("must be positive and finite, got {}", self.lambda),
            ));
        }
        if self.gradient.len() != self.hessian.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.hessian.dim(),
                found: self.gradient.len(),
            });
        }
        self.dist.validate()
    }

    /// Seed of worker `k` (1-based) in this round.
    pub fn worker_seed(&self, k: usize) -> u64 {
        seed::mix(self.master_seed, self.round, k as u64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundResult {
    /// `W̄g`, averaged over surviving workers.
    pub direction: Vec<f64>,
    /// Indexed by worker; `NaN` for a worker that failed.
    pub per_worker_lambda_hat: Vec<f64>,
    pub degenerate_count: usize,
    pub dropped: usize,
    pub wall_times: Vec<Duration>,
}

impl RoundResult {
    pub fn survivors(&self) -> usize {
        self.per_worker_lambda_hat.len() - self.dropped
    }

    /// Mean `λ̂` over workers that produced a finite one.
    pub fn mean_lambda_hat(&self) -> f64 {
        let (sum, n) = self
            .per_worker_lambda_hat
            .iter()
            .filter(|l| l.is_finite())
            .fold((0.0, 0usize), |(s, n), &l| (s + l, n + 1));
        if n == 0 {
            f64::NAN
        } else {
            sum / n as f64
        }
    }
}

/// Sketches `h` with a fresh `m×d` sketch and picks `λ̂` on it.
pub fn calibrate_worker(
    h: &HessianView,
    lambda: f64,
    m: usize,
    dist: SketchDistribution,
    seed: u64,
    debias: bool,
) -> Result<(SketchedHessian, LambdaChoice)> {
    let sketch = sample_sketch(dist, m, h.dim(), seed)?;
    let sk = sketch_hessian(sketch, h)?;
    let choice = if debias {
        choose_lambda_hat(&sk, lambda)?
    } else {
        LambdaChoice {
            lambda_hat: lambda,
            degenerate: false,
        }
    };
    Ok((sk, choice))
}

#[derive(Debug)]
struct WorkerOutput {
    direction: Option<Vec<f64>>,
    lambda_hat: f64,
    degenerate: bool,
    elapsed: Duration,
}

fn run_worker(spec: &RoundSpec<'_>, k: usize) -> WorkerOutput {
    let start = Instant::now();
    let out = calibrate_worker(
        spec.hessian,
        spec.lambda,
        spec.m,
        spec.dist,
        spec.worker_seed(k),
        spec.debias,
    )
    .and_then(|(sk, choice)| {
        Ok((
            sk.apply_debiased_inverse(choice.lambda_hat, spec.gradient)?,
            choice,
        ))
    });
    let elapsed = start.elapsed();
    match out {
        Ok((dir, choice)) if dir.iter().all(|v| v.is_finite()) => WorkerOutput {
            direction: Some(dir),
            lambda_hat: choice.lambda_hat,
            degenerate: choice.degenerate,
            elapsed,
        },
        Ok((_, choice)) => WorkerOutput {
            direction: None,
            lambda_hat: choice.lambda_hat,
            degenerate: choice.degenerate,
            elapsed,
        },
        Err(_) => WorkerOutput {
            direction: None,
            lambda_hat: f64::NAN,
            degenerate: false,
            elapsed,
        },
    }
}

/// How a worker's finishing time is measured for the straggler cut-off.
#[derive(Clone, Debug)]
pub enum Latency {
    WallClock,
    /// Per-worker latencies, indexed by worker; lets tests and simulations
    /// inject stragglers deterministically.
    Simulated(Vec<Duration>),
}

pub fn run_round(spec: &RoundSpec<'_>) -> Result<RoundResult> {
    run_round_with_timeout(spec, Duration::MAX, &Latency::WallClock)
}

/// Like [`run_round`], but workers whose latency exceeds `timeout` are left
/// out and the average is taken over the survivors.
pub fn run_round_with_timeout(
    spec: &RoundSpec<'_>,
    timeout: Duration,
    latency: &Latency,
) -> Result<RoundResult> {
    spec.validate()?;
    if timeout.is_zero() {
        return Err(invalid("timeout", "must be positive"));
    }
    if let Latency::Simulated(lat) = latency {
        if lat.len() != spec.q {
            return Err(Error::DimensionMismatch {
                expected: spec.q,
                found: lat.len(),
            });
        }
    }
    let outputs: Vec<WorkerOutput> = (1..=spec.q)
        .into_par_iter()
        .map(|k| run_worker(spec, k))
        .collect();

    let d = spec.gradient.len();
    let mut sum = vec![0.0; d];
    let mut survivors = 0usize;
    let mut degenerate_count = 0usize;
    let mut per_worker_lambda_hat = Vec::with_capacity(spec.q);
    let mut wall_times = Vec::with_capacity(spec.q);
    for (i, out) in outputs.iter().enumerate() {
        per_worker_lambda_hat.push(out.lambda_hat);
        wall_times.push(out.elapsed);
        degenerate_count += usize::from(out.degenerate);
        let finish = match latency {
            Latency::WallClock => out.elapsed,
            Latency::Simulated(lat) => lat[i],
        };
        let keep = finish <= timeout && !(spec.drop_degenerate && out.degenerate);
        if let (true, Some(dir)) = (keep, &out.direction) {
            axpy(1.0, dir, &mut sum);
            survivors += 1;
        }
    }
    if survivors == 0 {
        return Err(Error::AllWorkersDropped {
            round: spec.round as usize,
            q: spec.q,
        });
    }
    let inv = 1.0 / survivors as f64;
    sum.iter_mut().for_each(|v| *v *= inv);
    Ok(RoundResult {
        direction: sum,
        per_worker_lambda_hat,
        degenerate_count,
        dropped: spec.q - survivors,
        wall_times,
    })
}
