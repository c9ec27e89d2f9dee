//! Exact and sketched Newton iterations with backtracking line search.
//!
//! The sketched solver runs `θ_t = θ_{t−1} − α_t W̄_t g_t` where `W̄_t g_t`
//! is the averaged worker direction from [`worker_pool::run_round`]. The
//! gradient carries the `λθ` term; the sketched operator sees only the data
//! Hessian and `λ` re-enters through each worker's `λ̂`.

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::calibration::choose_m;
use crate::error::{invalid, Error, Result};
use crate::linalg::{
    dot, error_matrix_norm, norm, solve_spd_shifted, HessianView, SymmetricMatrix,
};
use crate::objectives::Objective;
use crate::seed;
use crate::sketching::SketchDistribution;
use crate::worker_pool::{run_round, RoundSpec};

/// When the server re-runs the sketch-size search.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CalibrationPolicy {
    /// At the first iteration only.
    Once,
    /// Every iteration, doubling from the previous `m̂` (never shrinking).
    EveryRound,
}

impl CalibrationPolicy {
    /// `Once` for constant Hessians, `EveryRound` otherwise.
    pub fn for_objective(obj: &dyn Objective) -> Self {
        if obj.has_constant_hessian() {
            CalibrationPolicy::Once
        } else {
            CalibrationPolicy::EveryRound
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    /// Armijo slope fraction.
    pub a: f64,
    /// Backtracking factor.
    pub b: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Stop once the squared decrement drops below twice this value.
    pub decrement_tol: f64,
    pub max_linesearch_steps: usize,
    /// `None` picks from [`CalibrationPolicy::for_objective`].
    pub policy: Option<CalibrationPolicy>,
    pub q: usize,
    pub dist: SketchDistribution,
    pub m0: usize,
    pub master_seed: u64,
    pub debias: bool,
    pub drop_degenerate: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            a: 0.1,
            b: 0.5,
            max_iters: 100,
            grad_tol: 1e-10,
            decrement_tol: 1e-14,
            max_linesearch_steps: 60,
            policy: None,
            q: 10,
            dist: SketchDistribution::Gaussian,
            m0: 10,
            master_seed: 0,
            debias: true,
            drop_degenerate: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a < 1.0) {
            return Err(invalid("a", format!("must lie in (0, 1), got {}", self.a)));
        }
        if !(self.b > 0.0 && self.b < 1.0) {
            return Err(invalid("b", format!("must lie in (0, 1), got {}", self.b)));
        }
        if !(self.grad_tol > 0.0) {
            return Err(invalid("grad_tol", "must be positive"));
        }
        if !(self.decrement_tol > 0.0) {
            return Err(invalid("decrement_tol", "must be positive"));
        }
        if self.max_linesearch_steps == 0 {
            return Err(invalid("max_linesearch_steps", "must be positive"));
        }
        if self.q == 0 {
            return Err(invalid("q", "must be at least 1"));
        }
        if self.m0 == 0 {
            return Err(invalid("m0", "must be at least 1"));
        }
        self.dist.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineSearch {
    pub alpha: f64,
    pub probes: usize,
    /// No probe satisfied the Armijo condition; `alpha` is the last one tried.
    pub capped: bool,
}

/// Backtracking: the largest `α ∈ {1, b, b², …}` with
/// `G(θ − αp) ≤ G(θ) − a·α·gᵀp`.
pub fn line_search(
    obj: &dyn Objective,
    theta: &[f64],
    g: &[f64],
    p: &[f64],
    cfg: &SolverConfig,
) -> Result<LineSearch> {
    let slope = dot(g, p);
    if slope < 0.0 || !slope.is_finite() {
        return Err(invalid(
            "direction",
            format!("not a descent direction, gᵀp = {slope}"),
        ));
    }
    let g0 = obj.value(theta);
    let mut alpha = 1.0;
    let mut any_finite = false;
    let mut trial = vec![0.0; theta.len()];
    for probe in 1..=cfg.max_linesearch_steps {
        for ((t, th), pi) in trial.iter_mut().zip(theta).zip(p) {
            *t = th - alpha * pi;
        }
        let v = obj.value(&trial);
        if v.is_finite() {
            any_finite = true;
            if v <= g0 - cfg.a * alpha * slope {
                return Ok(LineSearch {
                    alpha,
                    probes: probe,
                    capped: false,
                });
            }
        }
        if probe < cfg.max_linesearch_steps {
            alpha *= cfg.b;
        }
    }
    if !any_finite {
        return Err(Error::LineSearchFailed {
            probes: cfg.max_linesearch_steps,
        });
    }
    Ok(LineSearch {
        alpha,
        probes: cfg.max_linesearch_steps,
        capped: true,
    })
}

#[derive(Clone, Debug)]
pub struct ExactStep {
    pub theta: Vec<f64>,
    /// `√(gᵀ(H + λI)⁻¹g)` at the starting point.
    pub decrement: f64,
    pub alpha: f64,
}

/// One damped Newton step with the exact Hessian, solved by Cholesky.
pub fn exact_newton_step(
    obj: &dyn Objective,
    theta: &[f64],
    cfg: &SolverConfig,
) -> Result<ExactStep> {
    let g = obj.gradient(theta);
    let p = exact_direction(obj, theta, &g)?;
    let ls = line_search(obj, theta, &g, &p, cfg)?;
    let next = theta
        .iter()
        .zip(&p)
        .map(|(t, pi)| t - ls.alpha * pi)
        .collect();
    Ok(ExactStep {
        theta: next,
        decrement: dot(&g, &p).max(0.0).sqrt(),
        alpha: ls.alpha,
    })
}

fn exact_direction(obj: &dyn Objective, theta: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    let h = obj.hessian(theta).densify();
    solve_spd_shifted(&h, obj.ridge_lambda(), g)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub t: usize,
    /// Objective after the step.
    pub value: f64,
    /// Gradient norm before the step.
    pub grad_norm: f64,
    pub alpha: f64,
    /// `√(gᵀW̄g)`.
    pub decrement: f64,
    pub m_hat: usize,
    pub mean_lambda_hat: f64,
    pub degenerate_count: usize,
    pub wall_time: Duration,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct NewtonTrace {
    pub initial_value: f64,
    pub records: Vec<IterationRecord>,
}

impl NewtonTrace {
    /// Objective at `θ₀, θ₁, …`.
    pub fn values(&self) -> Vec<f64> {
        std::iter::once(self.initial_value)
            .chain(self.records.iter().map(|r| r.value))
            .collect()
    }

    /// First iteration at which `G(θ_t) − G* ≤ tol`.
    pub fn iterations_to_gap(&self, optimum: f64, tol: f64) -> Option<usize> {
        self.values().iter().position(|v| v - optimum <= tol)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum StopReason {
    GradientTolerance,
    DecrementTolerance,
    /// The line search found no decrease; the iterate was left in place.
    Stalled,
    IterationCap,
}

#[derive(Clone, Debug)]
pub struct NewtonOutcome {
    pub theta: Vec<f64>,
    pub trace: NewtonTrace,
    pub stop: StopReason,
}

impl NewtonOutcome {
    pub fn converged(&self) -> bool {
        matches!(
            self.stop,
            StopReason::GradientTolerance | StopReason::DecrementTolerance
        )
    }

    pub fn hit_cap(&self) -> bool {
        self.stop == StopReason::IterationCap
    }

    pub fn iterations(&self) -> usize {
        self.trace.records.len()
    }
}

struct Direction {
    p: Vec<f64>,
    m_hat: usize,
    mean_lambda_hat: f64,
    degenerate_count: usize,
}

fn newton_loop(
    obj: &dyn Objective,
    theta0: &[f64],
    cfg: &SolverConfig,
    mut direction: impl FnMut(usize, &[f64], &[f64]) -> Result<Direction>,
) -> Result<NewtonOutcome> {
    cfg.validate()?;
    if theta0.len() != obj.dim() {
        return Err(Error::DimensionMismatch {
            expected: obj.dim(),
            found: theta0.len(),
        });
    }
    let mut theta = theta0.to_vec();
    let mut value = obj.value(&theta);
    let mut trace = NewtonTrace {
        initial_value: value,
        records: Vec::new(),
    };
    for t in 1..=cfg.max_iters {
        let start = Instant::now();
        let g = obj.gradient(&theta);
        let grad_norm = norm(&g);
        if grad_norm <= cfg.grad_tol {
            return Ok(NewtonOutcome {
                theta,
                trace,
                stop: StopReason::GradientTolerance,
            });
        }
        let dir = direction(t, &theta, &g)?;
        let dec2 = dot(&g, &dir.p);
        if dec2 <= 2.0 * cfg.decrement_tol {
            return Ok(NewtonOutcome {
                theta,
                trace,
                stop: StopReason::DecrementTolerance,
            });
        }
        let ls = line_search(obj, &theta, &g, &dir.p, cfg)?;
        let next: Vec<f64> = theta
            .iter()
            .zip(&dir.p)
            .map(|(th, pi)| th - ls.alpha * pi)
            .collect();
        let next_value = obj.value(&next);
        if ls.capped && !(next_value < value) {
            return Ok(NewtonOutcome {
                theta,
                trace,
                stop: StopReason::Stalled,
            });
        }
        theta = next;
        value = next_value;
        trace.records.push(IterationRecord {
            t,
            value,
            grad_norm,
            alpha: ls.alpha,
            decrement: dec2.sqrt(),
            m_hat: dir.m_hat,
            mean_lambda_hat: dir.mean_lambda_hat,
            degenerate_count: dir.degenerate_count,
            wall_time: start.elapsed(),
        });
    }
    Ok(NewtonOutcome {
        theta,
        trace,
        stop: StopReason::IterationCap,
    })
}

/// Damped Newton with exact `(H + λI)⁻¹g` directions.
pub fn exact_newton_solve(
    obj: &dyn Objective,
    theta0: &[f64],
    cfg: &SolverConfig,
) -> Result<NewtonOutcome> {
    let d = obj.dim();
    let lambda = obj.ridge_lambda();
    newton_loop(obj, theta0, cfg, |_, theta, g| {
        Ok(Direction {
            p: exact_direction(obj, theta, g)?,
            m_hat: d,
            mean_lambda_hat: lambda,
            degenerate_count: 0,
        })
    })
}

/// The parallel approximate Newton method.
///
/// At each calibration tick the server picks `m̂` by doubling. Its test
/// sketch at each size is the same in every round, so with a constant Hessian
/// a repeated search from the previous `m̂` accepts it again. Then `q` workers each draw a fresh sketch, pick `λ̂`,
/// and return `Ŵ⁽ᵏ⁾g`.
pub fn sketched_newton_solve(
    obj: &dyn Objective,
    theta0: &[f64],
    cfg: &SolverConfig,
) -> Result<NewtonOutcome> {
    let policy = cfg
        .policy
        .unwrap_or_else(|| CalibrationPolicy::for_objective(obj));
    let lambda = obj.ridge_lambda();
    let mut m_hat: Option<usize> = None;
    let mut constant_h: Option<HessianView> = None;
    newton_loop(obj, theta0, cfg, |t, theta, g| {
        let fresh;
        let h = if obj.has_constant_hessian() {
            constant_h.get_or_insert_with(|| obj.hessian(theta))
        } else {
            fresh = obj.hessian(theta);
            &fresh
        };
        let recalibrate = match (policy, m_hat) {
            (_, None) => Some(cfg.m0),
            (CalibrationPolicy::EveryRound, Some(prev)) => Some(prev),
            (CalibrationPolicy::Once, Some(_)) => None,
        };
        if let Some(start) = recalibrate {
            let sel = choose_m(h, lambda, start, cfg.dist, seed::mix(cfg.master_seed, 0, 0))?;
            m_hat = Some(sel.m_hat);
        }
        let m = m_hat.expect("calibrated at the first iteration");
        let round = run_round(&RoundSpec {
            round: t as u64,
            gradient: g,
            hessian: h,
            lambda,
            m,
            dist: cfg.dist,
            q: cfg.q,
            master_seed: cfg.master_seed,
            debias: cfg.debias,
            drop_degenerate: cfg.drop_degenerate,
        })?;
        Ok(Direction {
            mean_lambda_hat: round.mean_lambda_hat(),
            degenerate_count: round.degenerate_count,
            p: round.direction,
            m_hat: m,
        })
    })
}

/// `‖(H+λI)^{1/2} W̄ (H+λI)^{1/2} − I‖₂` at `θ`; the η of an η-accurate step.
pub fn eta_accuracy(obj: &dyn Objective, theta: &[f64], w_bar: &SymmetricMatrix) -> Result<f64> {
    crate::linalg::check_dense_dim(obj.dim())?;
    let h = obj.hessian(theta).densify();
    error_matrix_norm(&h, obj.ridge_lambda(), w_bar)
}
