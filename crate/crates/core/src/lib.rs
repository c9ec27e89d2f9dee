//! Massively parallel approximate Newton with debiased sketched inverse Hessians.
//!
//! Each simulated worker compresses the Hessian `H` with an i.i.d. sketch
//! `S` (m×d), and returns `Sᵀ(SHSᵀ + λ̂I)⁻¹S g`. The sketch size `m` and the
//! shrunken regularizer `λ̂` are calibrated from the empirical Stieltjes
//! transform of `SHSᵀ` using the Marchenko-Pastur equation, so the averaged
//! estimator is a low-bias surrogate for `(H + λI)⁻¹`. The server averages
//! the workers' directions and runs Newton iterations with backtracking.
//!
//! Module map:
//!
//! - [`linalg`]: symmetric eigendecomposition, shifted solves, Hessian views.
//! - [`objectives`]: ridge, logistic and quadratic objectives.
//! - [`sketching`]: sketch ensembles, sketched Hessians, the debiased estimator.
//! - [`calibration`]: effective dimension, Stieltjes transforms, choice of `m` and `λ̂`.
//! - [`worker_pool`]: one simulated round of `q` workers and server averaging.
//! - [`newton`]: line search, exact and sketched Newton solvers.
//! - [`diagnostics`]: bias proxy, deterministic-equivalent and Wishart checks.
//! - [`data`]: libsvm ingestion and synthetic designs.
//! - [`experiments`]: drivers shared by the CLI and the acceptance suite.

pub mod calibration;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod newton;
pub mod objectives;
pub mod seed;
pub mod sketching;
pub mod worker_pool;

pub use error::{Error, Result};
