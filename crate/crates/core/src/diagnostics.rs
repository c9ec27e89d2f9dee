//! Monte-Carlo measurements of the estimator: the Frobenius bias proxy,
//! agreement with the Marchenko-Pastur deterministic equivalents, and the
//! pure-Wishart (`H = 0`) error scaling.
//!
//! Everything here forms d×d matrices and is limited to
//! [`MAX_DENSE_DIM`](crate::linalg::MAX_DENSE_DIM).

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, Par};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::calibration::{
    lambda_hat_from_eigenvalues, mp_stieltjes_oracle, stieltjes_from_eigenvalues, Spectrum,
};
use crate::data::haar_orthonormal;
use crate::error::{invalid, Error, Result};
use crate::linalg::{
    check_dense_dim, cholesky_whiten, spectral_map, sym_eig, sym_eigenvalues, HessianView,
    SymmetricMatrix,
};
use crate::seed;
use crate::sketching::{
    sample_sketch, sketch_hessian, sketched_gram_eigenvalues, SketchDistribution,
};
use crate::worker_pool::calibrate_worker;

/// Linear-interpolation percentile, `p ∈ [0, 100]`. `NaN` on empty input.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn median(values: &[f64]) -> f64 {
    percentile(values, 50.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Stats {
    pub p20: f64,
    pub median: f64,
    pub p80: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Self {
        Self {
            p20: percentile(values, 20.0),
            median: median(values),
            p80: percentile(values, 80.0),
        }
    }
}

/// Per-trial `‖W̄ − W‖_F²/d²` for the debiased and the uncorrected (`λ̂ = λ`)
/// estimators, built from the same sketches.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BiasPoint {
    pub m: usize,
    pub q: usize,
    pub corrected: Vec<f64>,
    pub uncorrected: Vec<f64>,
}

impl BiasPoint {
    pub fn corrected_stats(&self) -> Stats {
        Stats::of(&self.corrected)
    }

    pub fn uncorrected_stats(&self) -> Stats {
        Stats::of(&self.uncorrected)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BiasCurve {
    pub effective_dim: f64,
    pub points: Vec<BiasPoint>,
}

fn accumulate_gram(acc: &mut Mat<f64>, z: &Mat<f64>, weight: f64) {
    matmul(
        acc.as_mut(),
        Accum::Add,
        z.transpose(),
        z.as_ref(),
        weight,
        Par::Seq,
    );
}

fn frobenius_sq_diff(a: &Mat<f64>, b: &SymmetricMatrix) -> f64 {
    let bm = b.as_mat();
    let mut s = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            let e = a[(i, j)] - bm[(i, j)];
            s += e * e;
        }
    }
    s
}

/// `(H + λI)⁻¹`, formed densely.
pub fn exact_inverse(h: &HessianView, lambda: f64) -> Result<SymmetricMatrix> {
    check_dense_dim(h.dim())?;
    Ok(spectral_map(&sym_eig(&h.densify())?, |l| {
        1.0 / (l + lambda)
    }))
}

/// One worker's `Z` factors (`Ŵ = ZᵀZ`) at its own `λ̂` and at `λ`.
///
/// Equivalent to [`calibrate_worker`] followed by densifying, but needs only
/// the eigenvalues of `SHSᵀ` plus two Cholesky factorizations.
fn paired_whitened(
    h: &HessianView,
    lambda: f64,
    m: usize,
    dist: SketchDistribution,
    seed: u64,
) -> Result<(Mat<f64>, Mat<f64>)> {
    let sketch = sample_sketch(dist, m, h.dim(), seed)?;
    let (gram, eigs) = sketched_gram_eigenvalues(&sketch, h)?;
    let choice = lambda_hat_from_eigenvalues(&eigs, lambda)?;
    let corrected = cholesky_whiten(&gram, choice.lambda_hat, sketch.matrix())?;
    let uncorrected = if choice.lambda_hat == lambda {
        corrected.clone()
    } else {
        cholesky_whiten(&gram, lambda, sketch.matrix())?
    };
    Ok((corrected, uncorrected))
}

/// The bias proxy at one sketch size.
///
/// In trial `t`, worker `k` uses seed `mix(seed, t, k)`; both variants share
/// that worker's sketch and differ only in the regularizer.
pub fn bias_proxy(
    h: &HessianView,
    lambda: f64,
    m: usize,
    q: usize,
    dist: SketchDistribution,
    trials: usize,
    seed: u64,
) -> Result<BiasPoint> {
    if q == 0 || trials == 0 || m == 0 {
        return Err(invalid("bias_proxy", "m, q and trials must be positive"));
    }
    let w = exact_inverse(h, lambda)?;
    let d = h.dim();
    let scale = 1.0 / (d as f64 * d as f64);
    let per_trial: Vec<Result<(f64, f64)>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut corr = Mat::<f64>::zeros(d, d);
            let mut unc = Mat::<f64>::zeros(d, d);
            for k in 1..=q {
                let (corrected, uncorrected) =
                    paired_whitened(h, lambda, m, dist, seed::mix(seed, t as u64, k as u64))?;
                accumulate_gram(&mut corr, &corrected, 1.0 / q as f64);
                accumulate_gram(&mut unc, &uncorrected, 1.0 / q as f64);
            }
            Ok((
                frobenius_sq_diff(&corr, &w) * scale,
                frobenius_sq_diff(&unc, &w) * scale,
            ))
        })
        .collect();
    let mut corrected = Vec::with_capacity(trials);
    let mut uncorrected = Vec::with_capacity(trials);
    for r in per_trial {
        let (c, u) = r?;
        corrected.push(c);
        uncorrected.push(u);
    }
    Ok(BiasPoint {
        m,
        q,
        corrected,
        uncorrected,
    })
}

/// Sketch sizes `⌈1.5·d_λ⌉, 2×, 4×, …` up to `min(d, 16·d_λ)`. The first
/// size is always included, even when it already exceeds `d`.
pub fn bias_sweep_sizes(effective_dim: f64, d: usize) -> Vec<usize> {
    let first = ((1.5 * effective_dim).ceil() as usize).max(1);
    let limit = (d as f64).min(16.0 * effective_dim);
    let mut out = vec![first];
    let mut m = 2 * first;
    while (m as f64) <= limit {
        out.push(m);
        m *= 2;
    }
    out
}

pub fn bias_curve(
    h: &HessianView,
    lambda: f64,
    q: usize,
    dist: SketchDistribution,
    trials: usize,
    seed: u64,
) -> Result<BiasCurve> {
    let spec = Spectrum::new(
        sym_eigenvalues(&h.densify())?
            .into_iter()
            .map(|v| v.max(0.0))
            .collect(),
    )?;
    let deff = crate::calibration::effective_dimension(&spec, lambda)?;
    let points = bias_sweep_sizes(deff, h.dim())
        .into_iter()
        .map(|m| bias_proxy(h, lambda, m, q, dist, trials, seed::mix(seed, m as u64, 0)))
        .collect::<Result<_>>()?;
    Ok(BiasCurve {
        effective_dim: deff,
        points,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DetEquivReport {
    pub m: usize,
    pub z: f64,
    pub trials: usize,
    pub stieltjes_mean: f64,
    pub stieltjes_oracle: f64,
    pub bilinear_mean: f64,
    pub bilinear_oracle: f64,
    /// The `5/√m` tolerance.
    pub budget: f64,
}

impl DetEquivReport {
    pub fn stieltjes_deviation(&self) -> f64 {
        (self.stieltjes_mean - self.stieltjes_oracle).abs()
    }

    pub fn bilinear_deviation(&self) -> f64 {
        (self.bilinear_mean - self.bilinear_oracle).abs()
    }

    pub fn within_budget(&self) -> bool {
        self.stieltjes_deviation() <= self.budget && self.bilinear_deviation() <= self.budget
    }
}

/// Compares `s_emp(z)` and `e_uᵀSᵀ(SHSᵀ − zI)⁻¹Se_v`, averaged over trials,
/// against `s(z)` and `e_uᵀ(H + s(z)⁻¹I)⁻¹e_v` for `H = diag(spec)`.
pub fn deterministic_equivalent_check(
    spec: &Spectrum,
    m: usize,
    z: f64,
    (u, v): (usize, usize),
    dist: SketchDistribution,
    trials: usize,
    seed: u64,
) -> Result<DetEquivReport> {
    let d = spec.len();
    if u >= d || v >= d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: u.max(v) + 1,
        });
    }
    if trials == 0 {
        return Err(invalid("trials", "must be positive"));
    }
    let s = mp_stieltjes_oracle(spec, m, z)?;
    let bilinear_oracle = if u == v {
        1.0 / (spec.values()[u] + 1.0 / s)
    } else {
        0.0
    };
    let h = spec.to_hessian();
    let samples: Vec<Result<(f64, f64)>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let sketch = sample_sketch(dist, m, d, seed::mix(seed, t as u64, 1))?;
            let su: Vec<f64> = sketch.matrix().col(u).iter().copied().collect();
            let sv: Vec<f64> = sketch.matrix().col(v).iter().copied().collect();
            let sk = sketch_hessian(sketch, &h)?;
            let se = stieltjes_from_eigenvalues(sk.eigenvalues(), z)?;
            let x = sk.decomposition().shifted_solve(-z, &sv)?;
            Ok((se, crate::linalg::dot(&su, &x)))
        })
        .collect();
    let (mut s_sum, mut b_sum) = (0.0, 0.0);
    for r in samples {
        let (a, b) = r?;
        s_sum += a;
        b_sum += b;
    }
    Ok(DetEquivReport {
        m,
        z,
        trials,
        stieltjes_mean: s_sum / trials as f64,
        stieltjes_oracle: s,
        bilinear_mean: b_sum / trials as f64,
        bilinear_oracle,
        budget: 5.0 / (m as f64).sqrt(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WishartReport {
    pub d: usize,
    pub m: usize,
    pub q: usize,
    pub samples: Vec<f64>,
    pub stats: Stats,
    /// `max(r, √r)` with `r = d/(mq)`.
    pub reference: f64,
}

/// `‖W̄ − I‖₂` for `H = 0`, `λ = 1`, where each `Ŵ⁽ᵏ⁾ = S⁽ᵏ⁾ᵀS⁽ᵏ⁾`.
pub fn wishart_error_norm(
    d: usize,
    m: usize,
    q: usize,
    dist: SketchDistribution,
    trials: usize,
    seed: u64,
) -> Result<WishartReport> {
    check_dense_dim(d)?;
    if q == 0 || trials == 0 || m == 0 || d == 0 {
        return Err(invalid("wishart", "d, m, q and trials must be positive"));
    }
    let h = HessianView::Diagonal(vec![0.0; d]);
    let samples: Vec<Result<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut acc = Mat::<f64>::zeros(d, d);
            for k in 1..=q {
                let (sk, choice) =
                    calibrate_worker(&h, 1.0, m, dist, seed::mix(seed, t as u64, k as u64), true)?;
                accumulate_gram(
                    &mut acc,
                    &sk.whitened_sketch(choice.lambda_hat)?,
                    1.0 / q as f64,
                );
            }
            for i in 0..d {
                acc[(i, i)] -= 1.0;
            }
            SymmetricMatrix::symmetrize(acc.as_ref()).spectral_norm()
        })
        .collect();
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
    let r = d as f64 / (m * q) as f64;
    Ok(WishartReport {
        d,
        m,
        q,
        stats: Stats::of(&samples),
        samples,
        reference: r.max(r.sqrt()),
    })
}

/// A test Hessian `H = AᵀA` with `A = D Vᵀ`, Haar `V`, and its `λ`.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub name: &'static str,
    pub hessian: HessianView,
    pub lambda: f64,
}

fn ensemble_from_singular(
    name: &'static str,
    singular: &[f64],
    lambda: f64,
    seed: u64,
) -> Result<Ensemble> {
    let d = singular.len();
    let v = haar_orthonormal(d, d, seed)?;
    let a = Mat::from_fn(d, d, |i, j| singular[i] * v[(j, i)]);
    Ok(Ensemble {
        name,
        hessian: HessianView::Factored(a),
        lambda,
    })
}

/// Singular values `(0.9 + ε_k)^{k/2}`, `ε_k ~ N(0, 10⁻⁴)`, with `λ = 10⁻³`:
/// fast exponential decay, small effective dimension.
pub fn ensemble_l(d: usize, seed: u64) -> Result<Ensemble> {
    let mut rng = seed::rng(seed::mix(seed, 0, 1));
    let singular: Vec<f64> = (1..=d)
        .map(|k| (0.9 + 0.01 * rng.sample::<f64, _>(StandardNormal)).powf(k as f64 / 2.0))
        .collect();
    ensemble_from_singular("L", &singular, 1e-3, seed::mix(seed, 0, 2))
}

/// Singular values `(k/d)²` with `λ = 10⁻⁵`: slow polynomial decay, effective
/// dimension close to `d`.
pub fn ensemble_r(d: usize, seed: u64) -> Result<Ensemble> {
    let singular: Vec<f64> = (1..=d).map(|k| (k as f64 / d as f64).powi(2)).collect();
    ensemble_from_singular("R", &singular, 1e-5, seed::mix(seed, 0, 2))
}

/// One long-format output row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CsvRow {
    pub experiment: String,
    pub m: usize,
    pub q: usize,
    pub trial: usize,
    pub metric: String,
    pub value: f64,
}

pub fn bias_point_rows(experiment: &str, point: &BiasPoint) -> Vec<CsvRow> {
    let mut rows = Vec::with_capacity(2 * point.corrected.len());
    for (metric, vals) in [
        ("corrected", &point.corrected),
        ("uncorrected", &point.uncorrected),
    ] {
        for (trial, &value) in vals.iter().enumerate() {
            rows.push(CsvRow {
                experiment: experiment.to_string(),
                m: point.m,
                q: point.q,
                trial,
                metric: metric.to_string(),
                value,
            });
        }
    }
    rows
}
