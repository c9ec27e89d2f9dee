//! Dense symmetric kernels shared by every other module.
//!
//! Matrices live in `faer::Mat<f64>`. A [`SymmetricMatrix`] is built so that
//! `m[(i, j)] == m[(j, i)]` holds bit-for-bit; the symmetric eigendecomposition
//! is the canonical factorization because it serves both Stieltjes evaluation
//! (all eigenvalues) and shifted solves at any number of shifts.

use faer::prelude::Solve;
use faer::{Col, ColRef, Mat, MatRef, Side};

use crate::error::{invalid, Error, Result};

/// Relative tolerance under which eigenvalues of a PSD matrix are treated as
/// round-off: `λ_min ≥ -PSD_REL_TOL · ‖M‖₂`.
pub const PSD_REL_TOL: f64 = 1e-10;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn col_to_vec(c: ColRef<'_, f64>) -> Vec<f64> {
    c.iter().copied().collect()
}

pub(crate) fn mat_vec(m: MatRef<'_, f64>, v: &[f64]) -> Vec<f64> {
    let out: Col<f64> = m * ColRef::from_slice(v);
    col_to_vec(out.as_ref())
}

fn max_abs(m: MatRef<'_, f64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            best = best.max(m[(i, j)].abs());
        }
    }
    best
}

fn all_finite(m: MatRef<'_, f64>) -> bool {
    (0..m.ncols()).all(|j| (0..m.nrows()).all(|i| m[(i, j)].is_finite()))
}

/// Dense symmetric matrix with exactly mirrored storage.
#[derive(Clone, Debug)]
pub struct SymmetricMatrix {
    mat: Mat<f64>,
}

impl SymmetricMatrix {
    /// Evaluates `f` on the lower triangle and mirrors it.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut mat = Mat::zeros(dim, dim);
        for j in 0..dim {
            for i in j..dim {
                let v = f(i, j);
                mat[(i, j)] = v;
                mat[(j, i)] = v;
            }
        }
        Self { mat }
    }

    /// Accepts a square matrix that is symmetric up to round-off and replaces
    /// it with `(M + Mᵀ)/2`.
    pub fn new(mat: Mat<f64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::DimensionMismatch {
                expected: mat.nrows(),
                found: mat.ncols(),
            });
        }
        if !all_finite(mat.as_ref()) {
            return Err(Error::NonFinite);
        }
        let scale = 1.0 + max_abs(mat.as_ref());
        let mut asym = 0.0f64;
        let n = mat.nrows();
        for j in 0..n {
            for i in j + 1..n {
                asym = asym.max((mat[(i, j)] - mat[(j, i)]).abs());
            }
        }
        if asym > 1e-9 * scale {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        Ok(Self::symmetrize(mat.as_ref()))
    }

    /// `(M + Mᵀ)/2` without any tolerance check. Panics on non-square input.
    pub fn symmetrize(mat: MatRef<'_, f64>) -> Self {
        assert_eq!(mat.nrows(), mat.ncols(), "symmetrize needs a square matrix");
        Self::from_fn(mat.nrows(), |i, j| 0.5 * (mat[(i, j)] + mat[(j, i)]))
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            mat: Mat::zeros(dim, dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mat: Mat::identity(dim, dim),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self::from_fn(diag.len(), |i, j| if i == j { diag[i] } else { 0.0 })
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mat[(i, j)]
    }

    pub fn as_mat(&self) -> MatRef<'_, f64> {
        self.mat.as_ref()
    }

    pub fn into_mat(self) -> Mat<f64> {
        self.mat
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: v.len(),
            });
        }
        Ok(mat_vec(self.mat.as_ref(), v))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.mat.norm_l2()
    }

    /// Largest absolute eigenvalue.
    pub fn spectral_norm(&self) -> Result<f64> {
        let eig = sym_eigenvalues(self)?;
        Ok(eig.iter().fold(0.0f64, |a, &b| a.max(b.abs())))
    }

    /// `M + shift·I`
    pub fn shifted(&self, shift: f64) -> Self {
        let mut mat = self.mat.clone();
        for i in 0..self.dim() {
            mat[(i, i)] += shift;
        }
        Self { mat }
    }

    /// `true` when the smallest eigenvalue is above `-PSD_REL_TOL · ‖M‖₂`.
    pub fn is_psd(&self) -> Result<bool> {
        let eig = sym_eigenvalues(self)?;
        let norm = eig.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let min = eig.last().copied().unwrap_or(0.0);
        Ok(min >= -PSD_REL_TOL * norm)
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues sorted descending.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    eigenvectors: Mat<f64>,
}

impl SpectralDecomposition {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Columns are eigenvectors, in the same order as [`Self::eigenvalues`].
    pub fn eigenvectors(&self) -> MatRef<'_, f64> {
        self.eigenvectors.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Eigenvalues with round-off negatives clamped to zero.
    pub fn clamped_eigenvalues(&self) -> impl Iterator<Item = f64> + '_ {
        self.eigenvalues.iter().map(|&l| l.max(0.0))
    }

    /// `U Λ Uᵀ`
    pub fn reconstruct(&self) -> Mat<f64> {
        let u = self.eigenvectors.as_ref();
        let scaled = Mat::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)] * self.eigenvalues[j]);
        &scaled * u.transpose()
    }

    /// `U diag(1/(λᵢ + shift)) Uᵀ v`, with negative `λᵢ` clamped to zero.
    pub fn shifted_solve(&self, shift: f64, v: &[f64]) -> Result<Vec<f64>> {
        if !(shift > 0.0) {
            return Err(invalid("shift", format!("must be positive, got {shift}")));
        }
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: v.len(),
            });
        }
        let u = self.eigenvectors.as_ref();
        let mut coef: Col<f64> = u.transpose() * ColRef::from_slice(v);
        for (i, c) in coef.iter_mut().enumerate() {
            *c /= self.eigenvalues[i].max(0.0) + shift;
        }
        let out: Col<f64> = u * &coef;
        Ok(col_to_vec(out.as_ref()))
    }
}

/// Full symmetric eigendecomposition, eigenvalues descending.
pub fn sym_eig(m: &SymmetricMatrix) -> Result<SpectralDecomposition> {
    if !all_finite(m.as_mat()) {
        return Err(Error::NonFinite);
    }
    let evd = m
        .as_mat()
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::EigenNonConvergence { dim: m.dim() })?;
    let eigenvalues: Vec<f64> = evd.S().column_vector().iter().rev().copied().collect();
    let eigenvectors = evd.U().reverse_cols().to_owned();
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Eigenvalues only, descending. Skips the eigenvector accumulation.
pub fn sym_eigenvalues(m: &SymmetricMatrix) -> Result<Vec<f64>> {
    if !all_finite(m.as_mat()) {
        return Err(Error::NonFinite);
    }
    let mut eig = m
        .as_mat()
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|_| Error::EigenNonConvergence { dim: m.dim() })?;
    eig.reverse();
    Ok(eig)
}

pub fn shifted_solve(decomp: &SpectralDecomposition, shift: f64, v: &[f64]) -> Result<Vec<f64>> {
    decomp.shifted_solve(shift, v)
}

/// Solves `(M + shift·I) x = rhs` by Cholesky.
pub fn solve_spd_shifted(m: &SymmetricMatrix, shift: f64, rhs: &[f64]) -> Result<Vec<f64>> {
    if rhs.len() != m.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            found: rhs.len(),
        });
    }
    let a = m.shifted(shift);
    let llt = a
        .as_mat()
        .llt(Side::Lower)
        .map_err(|_| Error::Factorization { dim: m.dim() })?;
    let mut x = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
    llt.solve_in_place(&mut x);
    Ok(col_to_vec(x.col(0)))
}

/// `L⁻¹R` where `LLᵀ = M + shift·I`, so that `(L⁻¹R)ᵀ(L⁻¹R) = Rᵀ(M + shift·I)⁻¹R`.
pub fn cholesky_whiten(m: &SymmetricMatrix, shift: f64, rhs: MatRef<'_, f64>) -> Result<Mat<f64>> {
    if rhs.nrows() != m.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            found: rhs.nrows(),
        });
    }
    let llt = m
        .shifted(shift)
        .as_mat()
        .llt(Side::Lower)
        .map_err(|_| Error::Factorization { dim: m.dim() })?;
    let mut z = rhs.to_owned();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(
        llt.L(),
        z.as_mut(),
        faer::Par::Seq,
    );
    Ok(z)
}

/// Largest dimension for which diagnostics form d×d matrices.
pub const MAX_DENSE_DIM: usize = 2000;

pub(crate) fn check_dense_dim(d: usize) -> Result<()> {
    if d > MAX_DENSE_DIM {
        Err(Error::TooLarge {
            dim: d,
            max: MAX_DENSE_DIM,
        })
    } else {
        Ok(())
    }
}

/// `U f(Λ) Uᵀ` for a function applied to the clamped eigenvalues.
pub fn spectral_map(decomp: &SpectralDecomposition, f: impl Fn(f64) -> f64) -> SymmetricMatrix {
    let u = decomp.eigenvectors();
    let vals: Vec<f64> = decomp.clamped_eigenvalues().map(f).collect();
    let scaled = Mat::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)] * vals[j]);
    let out = &scaled * u.transpose();
    SymmetricMatrix::symmetrize(out.as_ref())
}

/// `‖(H + λI)^{1/2} W (H + λI)^{1/2} − I‖₂`, how far `W` is from
/// `(H + λI)⁻¹` in the geometry of `H + λI`.
pub fn error_matrix_norm(h: &SymmetricMatrix, lambda: f64, w: &SymmetricMatrix) -> Result<f64> {
    if w.dim() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            found: w.dim(),
        });
    }
    check_dense_dim(h.dim())?;
    let root = spectral_map(&sym_eig(h)?, |l| (l + lambda).sqrt());
    let mut e = root.as_mat() * w.as_mat() * root.as_mat();
    for i in 0..e.nrows() {
        e[(i, i)] -= 1.0;
    }
    SymmetricMatrix::symmetrize(e.as_ref()).spectral_norm()
}

/// The curvature operator `H`, either explicit or as `AᵀA`.
///
/// `Diagonal` is a fast path for synthetic spectra: sketching it costs
/// `O(d·m²)` instead of `O(d²·m)`.
#[derive(Clone, Debug)]
pub enum HessianView {
    Dense(SymmetricMatrix),
    /// `H = AᵀA` with `A` of shape n×d.
    Factored(Mat<f64>),
    Diagonal(Vec<f64>),
}

impl HessianView {
    pub fn dim(&self) -> usize {
        match self {
            HessianView::Dense(m) => m.dim(),
            HessianView::Factored(a) => a.ncols(),
            HessianView::Diagonal(d) => d.len(),
        }
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        hessian_matvec(self, v)
    }

    pub fn densify(&self) -> SymmetricMatrix {
        match self {
            HessianView::Dense(m) => m.clone(),
            HessianView::Factored(a) => {
                let h = a.transpose() * a;
                SymmetricMatrix::symmetrize(h.as_ref())
            }
            HessianView::Diagonal(d) => SymmetricMatrix::from_diagonal(d),
        }
    }
}

/// `Hv`; for the factored view this is `Aᵀ(Av)` and never forms `H`.
pub fn hessian_matvec(h: &HessianView, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            found: v.len(),
        });
    }
    Ok(match h {
        HessianView::Dense(m) => mat_vec(m.as_mat(), v),
        HessianView::Factored(a) => {
            let av: Col<f64> = a * ColRef::from_slice(v);
            let out: Col<f64> = a.transpose() * &av;
            col_to_vec(out.as_ref())
        }
        HessianView::Diagonal(d) => d.iter().zip(v).map(|(a, b)| a * b).collect(),
    })
}
