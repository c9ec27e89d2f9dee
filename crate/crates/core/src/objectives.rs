//! Convex objectives `G(θ) = F(θ) + (λ/2)‖θ‖²`.
//!
//! The gradient includes the `λθ` term, but [`Objective::hessian`] returns the
//! curvature of `F` alone. The sketched estimator only ever sees `H = ∇²F`;
//! `λ` reaches it through the debiasing regularizer. Callers that need the
//! full Hessian add `λI` themselves.
//!
//! The ridge loss is normalized per sample: `F(θ) = (1/n)‖Xθ − y‖²`, so the
//! meaning of `λ` depends on `n`.

use faer::{Col, ColRef, Mat, MatRef};

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, mat_vec, HessianView, SymmetricMatrix, PSD_REL_TOL};

/// Logistic Hessian weights are clamped below at this value.
pub const MIN_LOGISTIC_WEIGHT: f64 = 1e-12;

/// Design matrix and responses. Rows of `x` are samples.
#[derive(Clone, Debug)]
pub struct Dataset {
    x: Mat<f64>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(x: Mat<f64>, y: Vec<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                found: y.len(),
            });
        }
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(invalid("dataset", "needs at least one row and one column"));
        }
        let finite_x = (0..x.ncols()).all(|j| x.col(j).iter().all(|v| v.is_finite()));
        if !finite_x || !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { x, y })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> MatRef<'_, f64> {
        self.x.as_ref()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Maps labels `{-1, +1}` to `{0, 1}`; leaves `{0, 1}` untouched and
    /// rejects anything else.
    pub fn into_binary_labels(mut self) -> Result<Self> {
        let has_neg = self.y.iter().any(|&v| v == -1.0);
        for (row, v) in self.y.iter_mut().enumerate() {
            *v = match *v {
                l if l == 1.0 => 1.0,
                l if l == 0.0 && !has_neg => 0.0,
                l if l == -1.0 => 0.0,
                label => return Err(Error::InvalidLabel { row, label }),
            };
        }
        Ok(self)
    }

    fn check_binary(&self) -> Result<()> {
        for (row, &label) in self.y.iter().enumerate() {
            if label != 0.0 && label != 1.0 {
                return Err(Error::InvalidLabel { row, label });
            }
        }
        Ok(())
    }
}

/// A twice-differentiable convex objective with an explicit ridge term.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    /// The `λ` of the `(λ/2)‖θ‖²` penalty.
    fn ridge_lambda(&self) -> f64;

    fn value(&self, theta: &[f64]) -> f64;

    /// `∇F(θ) + λθ`.
    fn gradient(&self, theta: &[f64]) -> Vec<f64>;

    /// `∇²F(θ)`, without the `λI` term.
    fn hessian(&self, theta: &[f64]) -> HessianView;

    /// Whether `hessian` is independent of `θ`.
    fn has_constant_hessian(&self) -> bool {
        false
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(invalid(
            "lambda",
            format!("must be positive and finite, got {lambda}"),
        ))
    }
}

fn assert_dim(theta: &[f64], d: usize) {
    assert_eq!(
        theta.len(),
        d,
        "parameter vector has length {} but objective has dimension {d}",
        theta.len()
    );
}

/// `(1/n)‖Xθ − y‖² + (λ/2)‖θ‖²`
#[derive(Clone, Debug)]
pub struct RidgeObjective {
    data: Dataset,
    lambda: f64,
    /// `√(2/n)·X`, so that `H = AᵀA = (2/n)XᵀX`.
    factor: Mat<f64>,
}

pub fn ridge_objective(data: Dataset, lambda: f64) -> Result<RidgeObjective> {
    check_lambda(lambda)?;
    let scale = (2.0 / data.n() as f64).sqrt();
    let factor = Mat::from_fn(data.n(), data.d(), |i, j| scale * data.x[(i, j)]);
    Ok(RidgeObjective {
        data,
        lambda,
        factor,
    })
}

impl RidgeObjective {
    pub fn data(&self) -> &Dataset {
        &self.data
    }

    fn residual(&self, theta: &[f64]) -> Vec<f64> {
        let mut r = mat_vec(self.data.x(), theta);
        for (ri, yi) in r.iter_mut().zip(&self.data.y) {
            *ri -= yi;
        }
        r
    }
}

impl Objective for RidgeObjective {
    fn dim(&self) -> usize {
        self.data.d()
    }

    fn ridge_lambda(&self) -> f64 {
        self.lambda
    }

    fn value(&self, theta: &[f64]) -> f64 {
        assert_dim(theta, self.dim());
        let r = self.residual(theta);
        dot(&r, &r) / self.data.n() as f64 + 0.5 * self.lambda * dot(theta, theta)
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        assert_dim(theta, self.dim());
        let r = self.residual(theta);
        let xt_r: Col<f64> = self.data.x().transpose() * ColRef::from_slice(&r);
        let scale = 2.0 / self.data.n() as f64;
        xt_r.iter()
            .zip(theta)
            .map(|(g, t)| scale * g + self.lambda * t)
            .collect()
    }

    fn hessian(&self, _theta: &[f64]) -> HessianView {
        HessianView::Factored(self.factor.clone())
    }

    fn has_constant_hessian(&self) -> bool {
        true
    }
}

/// Numerically stable `σ(u) = 1/(1 + e^{-u})`.
pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^u)` without overflow.
fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

/// Mean log loss plus `(λ/2)‖θ‖²`, labels in `{0, 1}`.
#[derive(Clone, Debug)]
pub struct LogisticObjective {
    data: Dataset,
    lambda: f64,
}

pub fn logistic_objective(data: Dataset, lambda: f64) -> Result<LogisticObjective> {
    check_lambda(lambda)?;
    data.check_binary()?;
    Ok(LogisticObjective { data, lambda })
}

impl LogisticObjective {
    pub fn data(&self) -> &Dataset {
        &self.data
    }
}

impl Objective for LogisticObjective {
    fn dim(&self) -> usize {
        self.data.d()
    }

    fn ridge_lambda(&self) -> f64 {
        self.lambda
    }

    fn value(&self, theta: &[f64]) -> f64 {
        assert_dim(theta, self.dim());
        let u = mat_vec(self.data.x(), theta);
        // -[y log σ(u) + (1-y) log(1-σ(u))] = softplus(u) - y·u
        let loss: f64 = u
            .iter()
            .zip(&self.data.y)
            .map(|(&ui, &yi)| softplus(ui) - yi * ui)
            .sum();
        loss / self.data.n() as f64 + 0.5 * self.lambda * dot(theta, theta)
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        assert_dim(theta, self.dim());
        let u = mat_vec(self.data.x(), theta);
        let resid: Vec<f64> = u
            .iter()
            .zip(&self.data.y)
            .map(|(&ui, &yi)| sigmoid(ui) - yi)
            .collect();
        let xt_r: Col<f64> = self.data.x().transpose() * ColRef::from_slice(&resid);
        let inv_n = 1.0 / self.data.n() as f64;
        xt_r.iter()
            .zip(theta)
            .map(|(g, t)| inv_n * g + self.lambda * t)
            .collect()
    }

    fn hessian(&self, theta: &[f64]) -> HessianView {
        assert_dim(theta, self.dim());
        let u = mat_vec(self.data.x(), theta);
        let inv_n = 1.0 / self.data.n() as f64;
        let row_scale: Vec<f64> = u
            .iter()
            .map(|&ui| {
                let s = sigmoid(ui);
                (s * (1.0 - s)).max(MIN_LOGISTIC_WEIGHT).sqrt() * inv_n.sqrt()
            })
            .collect();
        let x = self.data.x();
        HessianView::Factored(Mat::from_fn(x.nrows(), x.ncols(), |i, j| {
            row_scale[i] * x[(i, j)]
        }))
    }
}

/// `½θᵀHθ − bᵀθ + (λ/2)‖θ‖²` with `H` PSD.
#[derive(Clone, Debug)]
pub struct QuadraticObjective {
    h: SymmetricMatrix,
    b: Vec<f64>,
    lambda: f64,
}

pub fn quadratic_objective(
    h: SymmetricMatrix,
    b: Vec<f64>,
    lambda: f64,
) -> Result<QuadraticObjective> {
    check_lambda(lambda)?;
    if b.len() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            found: b.len(),
        });
    }
    let eig = crate::linalg::sym_eigenvalues(&h)?;
    let norm = eig.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let min = eig.last().copied().unwrap_or(0.0);
    if min < -PSD_REL_TOL * norm {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
        });
    }
    Ok(QuadraticObjective { h, b, lambda })
}

impl QuadraticObjective {
    pub fn matrix(&self) -> &SymmetricMatrix {
        &self.h
    }

    pub fn linear_term(&self) -> &[f64] {
        &self.b
    }
}

impl Objective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.h.dim()
    }

    fn ridge_lambda(&self) -> f64 {
        self.lambda
    }

    fn value(&self, theta: &[f64]) -> f64 {
        assert_dim(theta, self.dim());
        let ht = mat_vec(self.h.as_mat(), theta);
        0.5 * dot(theta, &ht) - dot(&self.b, theta) + 0.5 * self.lambda * dot(theta, theta)
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        assert_dim(theta, self.dim());
        let ht = mat_vec(self.h.as_mat(), theta);
        ht.iter()
            .zip(&self.b)
            .zip(theta)
            .map(|((h, b), t)| h - b + self.lambda * t)
            .collect()
    }

    fn hessian(&self, _theta: &[f64]) -> HessianView {
        HessianView::Dense(self.h.clone())
    }

    fn has_constant_hessian(&self) -> bool {
        true
    }
}
