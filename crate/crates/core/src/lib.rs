//! Model-based clustering of matrix-variate data with finite mixtures of
//! matrix-variate skew-t distributions.
//!
//! The skew-t component has location `M`, row scale `Σ`, column scale `Ψ`,
//! skewness `Λ` and flatness `ν`, and is generated as
//! `Y = M + W^{-1/2}(UΛ + Z)` with `Z` matrix-normal, `W ~ Gamma(ν/2, ν/2)`
//! and `U` standard half-normal. Parameters are estimated by ECME: closed-form
//! conditional maximization of the expected complete-data log-likelihood for
//! `M, Σ, Ψ, Λ` and direct maximization of the observed log-likelihood for `ν`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision, clippy::type_complexity)]

pub mod dist;
pub mod ecme;
pub mod error;
pub mod forms;
pub mod init;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod mixture;
pub mod model;
pub mod sim;
pub mod special;

pub use dist::{log_density, mean, posterior_moments, posterior_w_logpdf, sample, PosteriorMoments};
pub use ecme::{fit_single, FitConfig, FitTrace, RescaleTiming};
pub use error::{MvstError, Result};
pub use forms::{quad_forms, zeta, QuadForms};
pub use init::InitSpec;
pub use linalg::{spd_factorize, Matrix, SpdFactor};
pub use metrics::{ari, bic, mcr};
pub use mixture::{classify, fit_mixture, FitResult, MixtureParams, Responsibilities};
pub use model::{Dataset, MatrixObservation, MvstParams, Variant};
pub use special::{log_gamma, student_t_cdf};
