//! Experiment drivers shared by the command-line tool and the test suites.

use rayon::prelude::*;
use serde::Serialize;

use crate::calibration::{choose_m, effective_dimension, Spectrum};
use crate::error::{invalid, Result};
use crate::newton::{exact_newton_solve, sketched_newton_solve, NewtonOutcome, SolverConfig};
use crate::objectives::Objective;
use crate::seed;
use crate::sketching::SketchDistribution;

#[derive(Clone, Debug)]
pub struct SizeSearchConfig {
    pub d: usize,
    pub alphas: Vec<f64>,
    pub lambda: f64,
    pub m0: usize,
    pub dists: Vec<SketchDistribution>,
    pub trials: usize,
    pub seed: u64,
}

impl Default for SizeSearchConfig {
    fn default() -> Self {
        Self {
            d: 10_000,
            alphas: vec![1.0, 2.0 / 3.0, 0.5],
            lambda: 1.0,
            m0: 10,
            dists: vec![SketchDistribution::Gaussian],
            trials: 20,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SizeSearchRow {
    pub alpha: f64,
    pub sketch: String,
    pub effective_dim: f64,
    pub trial: usize,
    pub m_hat: usize,
    pub success: bool,
}

/// Whether `m̂` landed in `[1.5·d_λ, max(m₀, 4·d_λ)]`.
pub fn sketch_size_in_range(m_hat: usize, effective_dim: f64, m0: usize) -> bool {
    let m = m_hat as f64;
    m >= 1.5 * effective_dim && m <= (m0 as f64).max(4.0 * effective_dim)
}

/// Runs the sketch-size search on power-law spectra `τ_k = k^{-α}`.
pub fn run_size_search(cfg: &SizeSearchConfig) -> Result<Vec<SizeSearchRow>> {
    if cfg.trials == 0 {
        return Err(invalid("trials", "must be positive"));
    }
    let mut rows = Vec::new();
    for (ai, &alpha) in cfg.alphas.iter().enumerate() {
        let spec = Spectrum::power_law(cfg.d, alpha);
        let deff = effective_dimension(&spec, cfg.lambda)?;
        let h = spec.to_hessian();
        for (di, &dist) in cfg.dists.iter().enumerate() {
            let trial_rows: Vec<Result<SizeSearchRow>> = (0..cfg.trials)
                .into_par_iter()
                .map(|trial| {
                    let s = seed::mix(cfg.seed, (ai * 64 + di) as u64, trial as u64 + 1);
                    let sel = choose_m(&h, cfg.lambda, cfg.m0, dist, s)?;
                    Ok(SizeSearchRow {
                        alpha,
                        sketch: dist.tag().to_string(),
                        effective_dim: deff,
                        trial,
                        m_hat: sel.m_hat,
                        success: !sel.capped && sketch_size_in_range(sel.m_hat, deff, cfg.m0),
                    })
                })
                .collect();
            for r in trial_rows {
                rows.push(r?);
            }
        }
    }
    Ok(rows)
}

/// Exact-Newton settings used to compute the reference optimum `G*`.
pub fn reference_config() -> SolverConfig {
    SolverConfig {
        grad_tol: 1e-12,
        decrement_tol: 1e-30,
        max_iters: 200,
        ..SolverConfig::default()
    }
}

#[derive(Clone, Debug)]
pub struct ConvergenceReport {
    /// `G*` from exact Newton run to `‖g‖ ≤ 1e-12`.
    pub optimum: f64,
    pub exact: NewtonOutcome,
    pub debiased: NewtonOutcome,
    pub uncorrected: Option<NewtonOutcome>,
}

impl ConvergenceReport {
    /// `(method, iteration, gap)` for every recorded iterate, `θ₀` included.
    pub fn gap_rows(&self) -> Vec<(&'static str, usize, f64)> {
        let mut out = Vec::new();
        let runs = [
            ("exact", Some(&self.exact)),
            ("debiased", Some(&self.debiased)),
            ("uncorrected", self.uncorrected.as_ref()),
        ];
        for (name, run) in runs {
            if let Some(run) = run {
                for (t, v) in run.trace.values().into_iter().enumerate() {
                    out.push((name, t, v - self.optimum));
                }
            }
        }
        out
    }
}

/// Runs exact Newton (for `G*`), the debiased sketched solver and, if asked,
/// the uncorrected one from the same seeds.
pub fn run_convergence(
    obj: &dyn Objective,
    theta0: &[f64],
    cfg: &SolverConfig,
    with_uncorrected: bool,
) -> Result<ConvergenceReport> {
    let reference = exact_newton_solve(obj, theta0, &reference_config())?;
    let optimum = obj.value(&reference.theta);
    let exact = exact_newton_solve(obj, theta0, cfg)?;
    let debiased = sketched_newton_solve(
        obj,
        theta0,
        &SolverConfig {
            debias: true,
            ..cfg.clone()
        },
    )?;
    let uncorrected = if with_uncorrected {
        Some(sketched_newton_solve(
            obj,
            theta0,
            &SolverConfig {
                debias: false,
                ..cfg.clone()
            },
        )?)
    } else {
        None
    };
    Ok(ConvergenceReport {
        optimum,
        exact,
        debiased,
        uncorrected,
    })
}
