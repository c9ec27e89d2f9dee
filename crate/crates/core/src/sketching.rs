//! I.i.d. sketches, sketched Hessians `SHSᵀ`, and the debiased estimator
//! `Ŵ = Sᵀ(SHSᵀ + λ̂I)⁻¹S`.
//!
//! All ensembles are scaled so that `E[Sᵢⱼ] = 0` and `E[Sᵢⱼ²] = 1/m`, which
//! makes `E[SᵀS] = I`.

use std::fmt;
use std::str::FromStr;

use faer::{Col, ColRef, Mat};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{
    col_to_vec, sym_eig, sym_eigenvalues, HessianView, SpectralDecomposition, SymmetricMatrix,
};
use crate::seed;

/// Density used by the sparse Rademacher ensemble unless stated otherwise.
pub const DEFAULT_SPARSE_DENSITY: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SketchDistribution {
    Gaussian,
    Rademacher,
    /// Entries are 0 with probability `1 − p` and `±1/√(pm)` otherwise.
    SparseRademacher {
        p: f64,
    },
}

impl SketchDistribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SketchDistribution::SparseRademacher { p } if !(p > 0.0 && p <= 1.0) => Err(invalid(
                "p",
                format!("sparse Rademacher density must lie in (0, 1], got {p}"),
            )),
            _ => Ok(()),
        }
    }

    /// Short tag used in CSV output: `G`, `R` or `SR`.
    pub fn tag(&self) -> &'static str {
        match self {
            SketchDistribution::Gaussian => "G",
            SketchDistribution::Rademacher => "R",
            SketchDistribution::SparseRademacher { .. } => "SR",
        }
    }
}

impl fmt::Display for SketchDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SketchDistribution::Gaussian => write!(f, "gaussian"),
            SketchDistribution::Rademacher => write!(f, "rademacher"),
            SketchDistribution::SparseRademacher { p } => write!(f, "sparse-rademacher:{p}"),
        }
    }
}

impl FromStr for SketchDistribution {
    type Err = Error;

    /// Accepts `gaussian`, `rademacher`, `sparse-rademacher` and
    /// `sparse-rademacher:<p>`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let dist = match lower.as_str() {
            "gaussian" | "g" => SketchDistribution::Gaussian,
            "rademacher" | "r" => SketchDistribution::Rademacher,
            "sparse-rademacher" | "sr" => SketchDistribution::SparseRademacher {
                p: DEFAULT_SPARSE_DENSITY,
            },
            other => match other.strip_prefix("sparse-rademacher:") {
                Some(p) => {
                    let p = p
                        .parse()
                        .map_err(|_| invalid("sketch", format!("bad density in `{s}`")))?;
                    SketchDistribution::SparseRademacher { p }
                }
                None => {
                    return Err(invalid(
                        "sketch",
                        format!("unknown sketch distribution `{s}`"),
                    ))
                }
            },
        };
        dist.validate()?;
        Ok(dist)
    }
}

/// An m×d sketching matrix together with how it was drawn.
#[derive(Clone, Debug)]
pub struct SketchSample {
    matrix: Mat<f64>,
    dist: SketchDistribution,
    seed: u64,
}

impl SketchSample {
    pub fn matrix(&self) -> faer::MatRef<'_, f64> {
        self.matrix.as_ref()
    }

    pub fn dist(&self) -> SketchDistribution {
        self.dist
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn m(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn d(&self) -> usize {
        self.matrix.ncols()
    }

    /// `S v`
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let out: Col<f64> = &self.matrix * ColRef::from_slice(v);
        col_to_vec(out.as_ref())
    }

    /// `Sᵀ w`
    pub fn apply_transpose(&self, w: &[f64]) -> Vec<f64> {
        let out: Col<f64> = self.matrix.transpose() * ColRef::from_slice(w);
        col_to_vec(out.as_ref())
    }
}

/// Draws an m×d sketch. Entries are generated row by row from a ChaCha8
/// stream keyed by `seed`, so the result is a pure function of the inputs.
pub fn sample_sketch(
    dist: SketchDistribution,
    m: usize,
    d: usize,
    seed: u64,
) -> Result<SketchSample> {
    dist.validate()?;
    if m == 0 || d == 0 {
        return Err(invalid(
            "m",
            format!("sketch shape must be positive, got {m}x{d}"),
        ));
    }
    let mut rng = seed::rng(seed);
    let mut matrix = Mat::<f64>::zeros(m, d);
    let scale = 1.0 / (m as f64).sqrt();
    match dist {
        SketchDistribution::Gaussian => {
            for i in 0..m {
                for j in 0..d {
                    matrix[(i, j)] = scale * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        SketchDistribution::Rademacher => {
            let mut bits = 0u64;
            let mut left = 0u32;
            for i in 0..m {
                for j in 0..d {
                    if left == 0 {
                        bits = rng.random();
                        left = 64;
                    }
                    matrix[(i, j)] = if bits & 1 == 1 { scale } else { -scale };
                    bits >>= 1;
                    left -= 1;
                }
            }
        }
        SketchDistribution::SparseRademacher { p } => {
            let value = 1.0 / (p * m as f64).sqrt();
            for i in 0..m {
                for j in 0..d {
                    let u: f64 = rng.random();
                    let sign: bool = rng.random();
                    matrix[(i, j)] = if u < p {
                        if sign {
                            value
                        } else {
                            -value
                        }
                    } else {
                        0.0
                    };
                }
            }
        }
    }
    Ok(SketchSample { matrix, dist, seed })
}

/// `SHSᵀ`, exactly symmetric.
///
/// Dense `H` costs `O(d²m)`, factored `H = AᵀA` costs `O(ndm)` and diagonal
/// `H` costs `O(dm²)`.
pub fn sketched_gram(sketch: &SketchSample, h: &HessianView) -> Result<SymmetricMatrix> {
    if sketch.d() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            found: sketch.d(),
        });
    }
    let s = sketch.matrix();
    let gram = match h {
        HessianView::Dense(hm) => {
            let sh = s * hm.as_mat();
            &sh * s.transpose()
        }
        HessianView::Factored(a) => {
            let b = a * s.transpose();
            b.transpose() * &b
        }
        HessianView::Diagonal(diag) => {
            let sd = Mat::from_fn(s.nrows(), s.ncols(), |i, j| s[(i, j)] * diag[j]);
            &sd * s.transpose()
        }
    };
    Ok(SymmetricMatrix::symmetrize(gram.as_ref()))
}

/// `SHSᵀ` together with its eigenvalues (descending), without eigenvectors.
///
/// For `H = AᵀA` with fewer rows in `A` than sketch rows, the eigenvalues
/// come from the smaller `BBᵀ` (`B = ASᵀ`), which shares the nonzero
/// spectrum of `SHSᵀ = BᵀB`; the rest are exact zeros.
pub fn sketched_gram_eigenvalues(
    sketch: &SketchSample,
    h: &HessianView,
) -> Result<(SymmetricMatrix, Vec<f64>)> {
    match h {
        HessianView::Factored(a) if a.nrows() < sketch.m() && sketch.d() == h.dim() => {
            let b = a * sketch.matrix().transpose();
            let gram = SymmetricMatrix::symmetrize((b.transpose() * &b).as_ref());
            let small = SymmetricMatrix::symmetrize((&b * b.transpose()).as_ref());
            let mut eigs = sym_eigenvalues(&small)?;
            eigs.resize(sketch.m(), 0.0);
            eigs.sort_by(|x, y| y.total_cmp(x));
            Ok((gram, eigs))
        }
        _ => {
            let gram = sketched_gram(sketch, h)?;
            let eigs = sym_eigenvalues(&gram)?;
            Ok((gram, eigs))
        }
    }
}

/// The m×m matrix `SHSᵀ` with its eigendecomposition, computed once and
/// reused for every Stieltjes evaluation and shifted solve.
#[derive(Clone, Debug)]
pub struct SketchedHessian {
    gram: SymmetricMatrix,
    decomp: SpectralDecomposition,
    sketch: SketchSample,
}

pub fn sketch_hessian(sketch: SketchSample, h: &HessianView) -> Result<SketchedHessian> {
    let gram = sketched_gram(&sketch, h)?;
    SketchedHessian::from_gram(sketch, gram)
}

impl SketchedHessian {
    /// Wraps an already formed `SHSᵀ`.
    pub fn from_gram(sketch: SketchSample, gram: SymmetricMatrix) -> Result<Self> {
        if gram.dim() != sketch.m() {
            return Err(Error::DimensionMismatch {
                expected: sketch.m(),
                found: gram.dim(),
            });
        }
        let decomp = sym_eig(&gram)?;
        Ok(Self {
            gram,
            decomp,
            sketch,
        })
    }

    pub fn gram(&self) -> &SymmetricMatrix {
        &self.gram
    }

    pub fn decomposition(&self) -> &SpectralDecomposition {
        &self.decomp
    }

    /// Eigenvalues of `SHSᵀ`, descending, not clamped.
    pub fn eigenvalues(&self) -> &[f64] {
        self.decomp.eigenvalues()
    }

    pub fn sketch(&self) -> &SketchSample {
        &self.sketch
    }

    pub fn m(&self) -> usize {
        self.sketch.m()
    }

    pub fn d(&self) -> usize {
        self.sketch.d()
    }

    /// `Sᵀ(SHSᵀ + λ̂I)⁻¹S g`. The result lies in the row space of `S`.
    pub fn apply_debiased_inverse(&self, lambda_hat: f64, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                found: g.len(),
            });
        }
        let sg = self.sketch.apply(g);
        let inner = self.decomp.shifted_solve(lambda_hat, &sg)?;
        Ok(self.sketch.apply_transpose(&inner))
    }

    /// The full d×d estimator `Ŵ`, rank at most `m`. Meant for diagnostics.
    pub fn densify_estimator(&self, lambda_hat: f64) -> Result<SymmetricMatrix> {
        let z = self.whitened_sketch(lambda_hat)?;
        let w = z.transpose() * &z;
        Ok(SymmetricMatrix::symmetrize(w.as_ref()))
    }

    /// `Z = diag((λᵢ + λ̂)^{-1/2}) Uᵀ S`, so that `Ŵ = ZᵀZ`.
    pub(crate) fn whitened_sketch(&self, lambda_hat: f64) -> Result<Mat<f64>> {
        if !(lambda_hat > 0.0) {
            return Err(invalid(
                "lambda_hat",
                format!("must be positive, got {lambda_hat}"),
            ));
        }
        let y = self.decomp.eigenvectors().transpose() * self.sketch.matrix();
        let scale: Vec<f64> = self
            .decomp
            .clamped_eigenvalues()
            .map(|l| 1.0 / (l + lambda_hat).sqrt())
            .collect();
        Ok(Mat::from_fn(y.nrows(), y.ncols(), |i, j| {
            scale[i] * y[(i, j)]
        }))
    }
}

pub fn apply_debiased_inverse(
    sk: &SketchedHessian,
    lambda_hat: f64,
    g: &[f64],
) -> Result<Vec<f64>> {
    sk.apply_debiased_inverse(lambda_hat, g)
}

pub fn densify_estimator(sk: &SketchedHessian, lambda_hat: f64) -> Result<SymmetricMatrix> {
    sk.densify_estimator(lambda_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm, sym_eigenvalues};
    use faer::prelude::Solve;
    use proptest::prelude::*;
    use rand::Rng;

    const ALL: [SketchDistribution; 3] = [
        SketchDistribution::Gaussian,
        SketchDistribution::Rademacher,
        SketchDistribution::SparseRademacher { p: 0.1 },
    ];

    fn random_factor(n: usize, d: usize, seed: u64) -> Mat<f64> {
        let s = sample_sketch(SketchDistribution::Gaussian, n, d, seed).unwrap();
        s.matrix().to_owned()
    }

    #[test]
    fn sampling_is_deterministic() {
        for dist in ALL {
            let a = sample_sketch(dist, 7, 13, 99).unwrap();
            let b = sample_sketch(dist, 7, 13, 99).unwrap();
            assert!(a.matrix() == b.matrix());
            let c = sample_sketch(dist, 7, 13, 100).unwrap();
            assert!(a.matrix() != c.matrix());
        }
    }

    #[test]
    fn rejects_bad_density() {
        for p in [0.0, -0.5, 1.5] {
            assert!(sample_sketch(SketchDistribution::SparseRademacher { p }, 2, 2, 0).is_err());
        }
        assert!("sparse-rademacher:0.3"
            .parse::<SketchDistribution>()
            .is_ok());
        assert!("sparse-rademacher:2".parse::<SketchDistribution>().is_err());
        assert!("cauchy".parse::<SketchDistribution>().is_err());
    }

    #[test]
    fn gaussian_moments() {
        let (m, d) = (200, 400);
        let s = sample_sketch(SketchDistribution::Gaussian, m, d, 1).unwrap();
        let mat = s.matrix();
        let mut sum = 0.0;
        let mut sq = 0.0;
        for j in 0..d {
            for i in 0..m {
                sum += mat[(i, j)];
                sq += mat[(i, j)].powi(2);
            }
        }
        let n = (m * d) as f64;
        // mean entry within 5/√(md) of zero; second moment ≈ 1/m
        assert!((sum / n).abs() <= 5.0 / n.sqrt());
        assert!(((sq / n) * m as f64 - 1.0).abs() < 0.02);
    }

    #[test]
    fn sparse_rademacher_zero_fraction() {
        let s = sample_sketch(
            SketchDistribution::SparseRademacher { p: 0.1 },
            100,
            1000,
            3,
        )
        .unwrap();
        let mat = s.matrix();
        let zeros = (0..1000)
            .map(|j| (0..100).filter(|&i| mat[(i, j)] == 0.0).count())
            .sum::<usize>();
        let frac = zeros as f64 / 1e5;
        assert!((frac - 0.9).abs() <= 0.02, "zero fraction {frac}");
    }

    #[test]
    fn expected_isometry_all_ensembles() {
        let (m, d, seeds) = (50, 100, 200u64);
        for dist in ALL {
            let mut acc = Mat::<f64>::zeros(d, d);
            for seed in 0..seeds {
                let s = sample_sketch(dist, m, d, seed).unwrap();
                acc += s.matrix().transpose() * s.matrix();
            }
            let err =
                (acc * faer::Scale(1.0 / seeds as f64) - Mat::<f64>::identity(d, d)).norm_l2();
            // each entry of the average has standard deviation about 1/√(seeds·m)
            let rms = err / d as f64;
            let bound = 3.0 / ((seeds * m as u64) as f64).sqrt();
            assert!(rms <= bound, "{dist}: {rms}");
        }
    }

    #[test]
    fn wide_factored_eigenvalues_match_full_gram() {
        let mut rng = seed::rng(21);
        let a = Mat::from_fn(6, 15, |_, _| rng.sample::<f64, _>(StandardNormal));
        let h = HessianView::Factored(a);
        let s = sample_sketch(SketchDistribution::Gaussian, 10, 15, 3).unwrap();
        let (gram, fast) = sketched_gram_eigenvalues(&s, &h).unwrap();
        let full = sym_eigenvalues(&gram).unwrap();
        assert_eq!(fast.len(), 10);
        for (x, y) in fast.iter().zip(&full) {
            assert!((x - y).abs() < 1e-10 * (1.0 + full[0]), "{x} vs {y}");
        }
    }

    #[test]
    fn zero_hessian_gives_zero_gram() {
        let s = sample_sketch(SketchDistribution::Gaussian, 5, 9, 0).unwrap();
        let sk = sketch_hessian(s, &HessianView::Diagonal(vec![0.0; 9])).unwrap();
        assert!(sk.gram().frobenius_norm() == 0.0);
        assert!(sk.eigenvalues().iter().all(|&l| l == 0.0));
    }

    #[test]
    fn identity_gram_trace() {
        // trace(SSᵀ)/m has mean d/m
        let (m, d) = (20, 2000);
        let s = sample_sketch(SketchDistribution::Gaussian, m, d, 4).unwrap();
        let sk = sketch_hessian(s, &HessianView::Diagonal(vec![1.0; d])).unwrap();
        let tr: f64 = sk.eigenvalues().iter().sum();
        let ratio = (tr / m as f64) / (d as f64 / m as f64);
        assert!((ratio - 1.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn dense_factored_diagonal_paths_agree() {
        let a = random_factor(30, 12, 8);
        let fact = HessianView::Factored(a);
        let dense = HessianView::Dense(fact.densify());
        let s = sample_sketch(SketchDistribution::Rademacher, 6, 12, 2).unwrap();
        let g1 = sketched_gram(&s, &fact).unwrap();
        let g2 = sketched_gram(&s, &dense).unwrap();
        let diff = (g1.as_mat() - g2.as_mat()).norm_max();
        assert!(diff <= 1e-8, "{diff}");

        let diag = vec![3.0, 0.5, 0.0, 1.0, 2.0, 0.25, 1.0, 1.0, 4.0, 0.1, 0.0, 7.0];
        let g3 = sketched_gram(&s, &HessianView::Diagonal(diag.clone())).unwrap();
        let g4 = sketched_gram(
            &s,
            &HessianView::Dense(SymmetricMatrix::from_diagonal(&diag)),
        )
        .unwrap();
        assert!((g3.as_mat() - g4.as_mat()).norm_max() <= 1e-12);
        assert!(sketched_gram(&s, &HessianView::Diagonal(vec![1.0; 3])).is_err());
    }

    #[test]
    fn nonzero_eigenvalues_match_sample_covariance() {
        // SHSᵀ and H^{1/2}SᵀSH^{1/2} share their nonzero spectrum
        let d = 40;
        let h: Vec<f64> = (1..=d).map(|k| 1.0 / k as f64).collect();
        let s = sample_sketch(SketchDistribution::Gaussian, 15, d, 5).unwrap();
        let sk = sketch_hessian(s.clone(), &HessianView::Diagonal(h.clone())).unwrap();
        let sqrt_h: Vec<f64> = h.iter().map(|v| v.sqrt()).collect();
        let sts = s.matrix().transpose() * s.matrix();
        let cov = SymmetricMatrix::from_fn(d, |i, j| sqrt_h[i] * sts[(i, j)] * sqrt_h[j]);
        let big = sym_eigenvalues(&cov).unwrap();
        for (a, b) in sk.eigenvalues().iter().zip(&big) {
            assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
        }
        assert!(big[15..].iter().all(|v| v.abs() <= 1e-8));
    }

    #[test]
    fn debiased_inverse_trivial_cases() {
        let d = 10;
        let s = sample_sketch(SketchDistribution::Gaussian, 4, d, 1).unwrap();
        let sk = sketch_hessian(s.clone(), &HessianView::Diagonal(vec![0.0; d])).unwrap();
        let g: Vec<f64> = (0..d).map(|i| i as f64 - 3.0).collect();
        let got = sk.apply_debiased_inverse(1.0, &g).unwrap();
        let expected = s.apply_transpose(&s.apply(&g));
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(sk
            .apply_debiased_inverse(1.0, &vec![0.0; d])
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        assert!(sk.apply_debiased_inverse(0.0, &g).is_err());
        let w = sk.densify_estimator(1.0).unwrap();
        let sts = s.matrix().transpose() * s.matrix();
        assert!((w.as_mat() - &sts).norm_max() < 1e-12);
    }

    #[test]
    fn debiased_inverse_matches_dense_formation() {
        let (d, m) = (8, 4);
        let a = random_factor(12, d, 21);
        let h = HessianView::Factored(a);
        let s = sample_sketch(SketchDistribution::Gaussian, m, d, 22).unwrap();
        let sk = sketch_hessian(s.clone(), &h).unwrap();
        let lam = 0.7;
        // direct route: LU solve of (SHSᵀ + λ̂I) against S
        let hd = h.densify();
        let inner = s.matrix() * hd.as_mat() * s.matrix().transpose()
            + Mat::<f64>::identity(m, m) * faer::Scale(lam);
        let mut rhs = s.matrix().to_owned();
        inner.partial_piv_lu().solve_in_place(&mut rhs);
        let w_direct = s.matrix().transpose() * &rhs;
        let g: Vec<f64> = (0..d).map(|i| ((i * i) as f64).sin()).collect();
        let direct = crate::linalg::mat_vec(w_direct.as_ref(), &g);
        let got = sk.apply_debiased_inverse(lam, &g).unwrap();
        let diff: Vec<f64> = got.iter().zip(&direct).map(|(x, y)| x - y).collect();
        assert!(norm(&diff) <= 1e-10 * norm(&direct));
        let dense = sk.densify_estimator(lam).unwrap().matvec(&g).unwrap();
        let diff: Vec<f64> = dense.iter().zip(&got).map(|(x, y)| x - y).collect();
        assert!(norm(&diff) <= 1e-10 * norm(&got));
    }

    #[test]
    fn estimator_rank_bounded_by_m() {
        let d = 30;
        let s = sample_sketch(SketchDistribution::Rademacher, 7, d, 3).unwrap();
        let h = HessianView::Diagonal((1..=d).map(|k| 1.0 / k as f64).collect());
        let sk = sketch_hessian(s, &h).unwrap();
        let w = sk.densify_estimator(0.3).unwrap();
        let eig = sym_eigenvalues(&w).unwrap();
        assert!(eig.iter().filter(|&&l| l > 1e-10).count() <= 7);
        assert!(*eig.last().unwrap() >= -1e-10 * eig[0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        /// ‖H^{1/2} Ŵ H^{1/2}‖ ≤ 1 and Ŵ is PSD.
        #[test]
        fn contraction_and_psd(seed in 0u64..100_000, m in 2usize..10, lam in 0.01f64..3.0, which in 0usize..3) {
            let d = 12;
            let h: Vec<f64> = (0..d).map(|k| ((k as u64 + seed) % 5) as f64 * 0.7).collect();
            let s = sample_sketch(ALL[which], m, d, seed).unwrap();
            let sk = sketch_hessian(s, &HessianView::Diagonal(h.clone())).unwrap();
            let w = sk.densify_estimator(lam).unwrap();
            let eig = sym_eigenvalues(&w).unwrap();
            prop_assert!(*eig.last().unwrap() >= -1e-10 * eig[0].abs().max(1e-300));
            let sh: Vec<f64> = h.iter().map(|v| v.sqrt()).collect();
            let k = SymmetricMatrix::from_fn(d, |i, j| sh[i] * w.get(i, j) * sh[j]);
            prop_assert!(k.spectral_norm().unwrap() <= 1.0 + 1e-10);
        }
    }
}
