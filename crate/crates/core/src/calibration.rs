//! Marchenko-Pastur calibration of the sketch size `m` and the debiasing
//! regularizer `λ̂`.
//!
//! With `s(z)` the Stieltjes transform of the companion Marchenko-Pastur law
//! of `(H, m)`, the estimator `Sᵀ(SHSᵀ + λ̃I)⁻¹S` is asymptotically unbiased
//! for `(H + λI)⁻¹` when `s(−λ̃) = 1/λ`, i.e. `λ̃ = λ(1 − d_λ/m)`. Neither
//! `s` nor `d_λ` is observable without inverting `H`, so both the choice of
//! `m` and the root `λ̂` are made from the empirical transform of `SHSᵀ`:
//!
//! - [`choose_m`] doubles `m` from `m₀` until `s_emp(−5λ/12) > 1/λ`, which
//!   w.h.p. lands in `[1.5·d_λ, 4·d_λ]`.
//! - [`choose_lambda_hat`] solves `s_emp(−λ̂) = 1/λ` on `[5λ/12, λ]`.
//!
//! [`mp_stieltjes_oracle`] solves the deterministic equation from the full
//! spectrum and exists for validation only.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::linalg::HessianView;
use crate::seed;
use crate::sketching::{
    sample_sketch, sketch_hessian, sketched_gram_eigenvalues, SketchDistribution, SketchedHessian,
};

/// Ratio defining the test point `z₀ = −(5/12)λ` and the lower end of the
/// `λ̂` bracket.
pub const TEST_POINT_RATIO: f64 = 5.0 / 12.0;

/// Bisection stops at this relative bracket width.
pub const BISECTION_REL_TOL: f64 = 1e-12;
pub const BISECTION_MAX_ITERS: usize = 200;

/// Eigenvalues of `H`, all non-negative.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum(Vec<f64>);

impl Spectrum {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(invalid(
                "spectrum",
                format!("eigenvalues must be finite and non-negative, found {bad}"),
            ));
        }
        Ok(Self(values))
    }

    /// `τ_k = k^{-α}` for `k = 1..=d`.
    pub fn power_law(d: usize, alpha: f64) -> Self {
        Self((1..=d).map(|k| (k as f64).powf(-alpha)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Diagonal Hessian with this spectrum.
    pub fn to_hessian(&self) -> HessianView {
        HessianView::Diagonal(self.0.clone())
    }
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(
            name,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

/// `d_μ = Σ τᵢ/(τᵢ + μ) = tr(H(H + μI)⁻¹)`.
pub fn effective_dimension(spec: &Spectrum, mu: f64) -> Result<f64> {
    check_positive("mu", mu)?;
    Ok(spec.0.iter().map(|&t| t / (t + mu)).sum())
}

/// `λ̃ = λ(1 − d_λ/m)`; an error when `m ≤ d_λ`, where no positive root of
/// `s(−λ̃) = 1/λ` exists.
pub fn oracle_lambda_tilde(spec: &Spectrum, lambda: f64, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(invalid("m", "must be positive"));
    }
    let deff = effective_dimension(spec, lambda)?;
    if (m as f64) <= deff {
        return Err(Error::NoValidRoot {
            m,
            effective_dim: deff,
        });
    }
    Ok(lambda * (1.0 - deff / m as f64))
}

/// Zero threshold for the `z = 0` evaluation: `1e-12·max(1, λ_max)`.
fn eig_zero_tol(eigs: &[f64]) -> f64 {
    1e-12 * eigs.iter().fold(1.0f64, |a, &b| a.max(b))
}

/// `(1/m) Σ 1/(λᵢ − z)` over the given eigenvalues (negatives clamped to 0).
///
/// At `z = 0` any eigenvalue below the zero threshold makes the transform
/// `+∞`.
pub fn stieltjes_from_eigenvalues(eigs: &[f64], z: f64) -> Result<f64> {
    if z > 0.0 || z.is_nan() {
        return Err(invalid(
            "z",
            format!("the empirical transform is evaluated at z <= 0, got {z}"),
        ));
    }
    if eigs.is_empty() {
        return Err(invalid("eigenvalues", "empty spectrum"));
    }
    if z == 0.0 {
        let tol = eig_zero_tol(eigs);
        if eigs.iter().any(|&l| l <= tol) {
            return Ok(f64::INFINITY);
        }
    }
    let sum: f64 = eigs.iter().map(|&l| 1.0 / (l.max(0.0) - z)).sum();
    Ok(sum / eigs.len() as f64)
}

/// Empirical Stieltjes transform of `SHSᵀ`.
pub fn empirical_stieltjes(sk: &SketchedHessian, z: f64) -> Result<f64> {
    stieltjes_from_eigenvalues(sk.eigenvalues(), z)
}

/// `Ψ(s) = (1/m) Σ τᵢ/(1 + sτᵢ) − 1/s`, the inverse of `z ↦ s(z)`.
pub fn psi(spec: &Spectrum, m: usize, s: f64) -> f64 {
    let tr: f64 = spec.0.iter().map(|&t| t / (1.0 + s * t)).sum();
    tr / m as f64 - 1.0 / s
}

/// Deterministic Stieltjes transform `s(z)` of the Marchenko-Pastur law for
/// population spectrum `spec` and `m` samples, `z < 0`.
///
/// Solves `1/s = −z + (1/m) Σ τᵢ/(1 + sτᵢ)` in the multiplied-out form
/// `g(s) = −zs + (1/m) Σ sτᵢ/(1 + sτᵢ) = 1`; `g` is strictly increasing with
/// `g(0) = 0`, so bisection over an expanding bracket is unconditionally
/// convergent.
pub fn mp_stieltjes_oracle(spec: &Spectrum, m: usize, z: f64) -> Result<f64> {
    if !(z < 0.0 && z.is_finite()) {
        return Err(invalid(
            "z",
            format!("must be negative and finite, got {z}"),
        ));
    }
    if m == 0 {
        return Err(invalid("m", "must be positive"));
    }
    let inv_m = 1.0 / m as f64;
    let g = |s: f64| -> f64 {
        let tr: f64 = spec.0.iter().map(|&t| s * t / (1.0 + s * t)).sum();
        -z * s + inv_m * tr - 1.0
    };
    let mut lo = 0.0f64;
    let mut hi = -1.0 / z;
    let mut expansions = 0;
    while g(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 1100 || !hi.is_finite() {
            return Err(Error::BracketFailure {
                what: "Marchenko-Pastur fixed point",
            });
        }
    }
    for _ in 0..BISECTION_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The sketch-size test: accept iff `s_emp(−5λ/12) > 1/λ`.
pub fn test_sketch_dim(sk: &SketchedHessian, lambda: f64) -> Result<bool> {
    accepts(sk.eigenvalues(), lambda).map(|(ok, _)| ok)
}

fn accepts(eigs: &[f64], lambda: f64) -> Result<(bool, f64)> {
    check_positive("lambda", lambda)?;
    let s = stieltjes_from_eigenvalues(eigs, -TEST_POINT_RATIO * lambda)?;
    Ok((s > 1.0 / lambda, s))
}

/// One probe of the doubling search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceEntry {
    pub m: usize,
    /// `s_emp(−5λ/12)` at this `m`.
    pub stieltjes: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug)]
pub struct MSelection {
    pub m_hat: usize,
    /// The accepted sketch; `None` when the search ran into `d`.
    pub sketched: Option<SketchedHessian>,
    pub trace: Vec<TraceEntry>,
    /// The search reached `m ≥ d` without accepting.
    pub capped: bool,
}

/// Chooses the sketch size by doubling.
///
/// Starting at `m₀`, while `m < d`: draw a fresh sketch (seed
/// `mix(seed, m, 0)`), accept and return if the test passes, otherwise
/// double. If the loop runs out, `m̂ = d` and `capped` is set; sketching no
/// longer saves work at that size.
pub fn choose_m(
    h: &HessianView,
    lambda: f64,
    m0: usize,
    dist: SketchDistribution,
    seed: u64,
) -> Result<MSelection> {
    check_positive("lambda", lambda)?;
    if m0 == 0 {
        return Err(invalid("m0", "must be positive"));
    }
    let d = h.dim();
    let mut m = m0;
    let mut trace = Vec::new();
    while m < d {
        let sketch = sample_sketch(dist, m, d, seed::mix(seed, m as u64, 0))?;
        let (gram, eigs) = sketched_gram_eigenvalues(&sketch, h)?;
        let (ok, s) = accepts(&eigs, lambda)?;
        trace.push(TraceEntry {
            m,
            stieltjes: s,
            accepted: ok,
        });
        if ok {
            let sketched = SketchedHessian::from_gram(sketch, gram)?;
            return Ok(MSelection {
                m_hat: m,
                sketched: Some(sketched),
                trace,
                capped: false,
            });
        }
        m *= 2;
    }
    Ok(MSelection {
        m_hat: d,
        sketched: None,
        trace,
        capped: true,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LambdaChoice {
    pub lambda_hat: f64,
    /// No root in the bracket, or `s_emp(0) ≤ 1/λ`; `λ̂` was clamped to `5λ/12`.
    pub degenerate: bool,
}

/// Solves `s_emp(−λ̂) = 1/λ` for `λ̂ ∈ [5λ/12, λ]`.
pub fn choose_lambda_hat(sk: &SketchedHessian, lambda: f64) -> Result<LambdaChoice> {
    lambda_hat_from_eigenvalues(sk.eigenvalues(), lambda)
}

/// [`choose_lambda_hat`] on a bare eigenvalue list.
///
/// `f(t) = s_emp(−t) − 1/λ` is strictly decreasing. If `s_emp(0) ≤ 1/λ` the
/// result is `5λ/12` flagged degenerate; if `f(λ) ≥ 0` (up to summation
/// round-off) the root is at or above the bracket and `λ̂ = λ`; if
/// `f(5λ/12) < 0` it is below and `λ̂ = 5λ/12`, flagged. Otherwise bisection.
pub fn lambda_hat_from_eigenvalues(eigs: &[f64], lambda: f64) -> Result<LambdaChoice> {
    check_positive("lambda", lambda)?;
    let lower = TEST_POINT_RATIO * lambda;
    let target = 1.0 / lambda;
    if stieltjes_from_eigenvalues(eigs, 0.0)? <= target {
        return Ok(LambdaChoice {
            lambda_hat: lower,
            degenerate: true,
        });
    }
    let f = |t: f64| stieltjes_from_eigenvalues(eigs, -t).map(|s| s - target);
    // averaging m equal terms is not exact in floating point
    let slack = 4.0 * f64::EPSILON * eigs.len() as f64 * target;
    if f(lambda)? >= -slack {
        return Ok(LambdaChoice {
            lambda_hat: lambda,
            degenerate: false,
        });
    }
    if f(lower)? < 0.0 {
        return Ok(LambdaChoice {
            lambda_hat: lower,
            degenerate: true,
        });
    }
    let (mut lo, mut hi) = (lower, lambda);
    for _ in 0..BISECTION_MAX_ITERS {
        if hi - lo <= BISECTION_REL_TOL * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(LambdaChoice {
        lambda_hat: 0.5 * (lo + hi),
        degenerate: false,
    })
}

/// Which sketch [`calibrate`] hands to the `λ̂` search.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub enum SketchReuse {
    /// Reuse the sketch accepted by the doubling search.
    #[default]
    Accepted,
    /// Draw a fresh, independent sketch at `m̂`.
    Fresh,
}

#[derive(Clone, Debug)]
pub struct CalibrationResult {
    pub m_hat: usize,
    pub lambda_hat: f64,
    /// The sketched Hessian `λ̂` was computed from.
    pub sketched: SketchedHessian,
    pub trace: Vec<TraceEntry>,
    /// The `λ̂` search hit its error branch, or `m` was capped at `d`.
    pub degenerate: bool,
}

/// [`choose_m`] followed by [`choose_lambda_hat`].
pub fn calibrate(
    h: &HessianView,
    lambda: f64,
    m0: usize,
    dist: SketchDistribution,
    seed: u64,
    reuse: SketchReuse,
) -> Result<CalibrationResult> {
    let sel = choose_m(h, lambda, m0, dist, seed)?;
    let sketched = match (reuse, sel.sketched) {
        (SketchReuse::Accepted, Some(sk)) => sk,
        _ => {
            let sketch = sample_sketch(
                dist,
                sel.m_hat,
                h.dim(),
                seed::mix(seed, sel.m_hat as u64, 1),
            )?;
            sketch_hessian(sketch, h)?
        }
    };
    let choice = choose_lambda_hat(&sketched, lambda)?;
    Ok(CalibrationResult {
        m_hat: sel.m_hat,
        lambda_hat: choice.lambda_hat,
        sketched,
        trace: sel.trace,
        degenerate: choice.degenerate || sel.capped,
    })
}
