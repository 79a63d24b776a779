//! ECME estimation of a single matrix-variate skew-t component.
//!
//! Each iteration runs the E-step (posterior moments of `W` and `γW`), the
//! four closed-form conditional maximizations for `M`, `Σ`, `Ψ`, `Λ` in that
//! order, and a direct maximization of the observed log-likelihood over `ν`.
//! E(log W | Y) is never needed: ν is the only parameter it touches and ν is
//! updated through the observed likelihood instead.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{DensityKernel, MomentKernel, PosteriorMoments};
use crate::error::{MvstError, Result};
use crate::forms::{PreparedComponent, QuadForms};
use crate::linalg::{spd_factorize_jittered, Matrix};
use crate::model::{Dataset, MvstParams, Variant};
use crate::special::ln_gamma;

/// When the `Σ[1,1] = 1` normalization is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RescaleTiming {
    PerIteration,
    AtConvergence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Relative log-likelihood change below which the fit stops.
    pub tol: f64,
    pub max_iter: usize,
    pub nu_bounds: (f64, f64),
    pub seed: u64,
    pub rescale_timing: RescaleTiming,
    pub variant: Variant,
    pub kmeans_restarts: usize,
    pub lambda_range: (f64, f64),
    pub nu_init: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 500,
            nu_bounds: (0.05, 200.0),
            seed: 0,
            rescale_timing: RescaleTiming::AtConvergence,
            variant: Variant::Mvst,
            kmeans_restarts: 10,
            lambda_range: (-1.0, 1.0),
            nu_init: 5.0,
        }
    }
}

impl FitConfig {
    pub fn with_variant(variant: Variant) -> Self {
        Self { variant, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(MvstError::InvalidArgument(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(MvstError::InvalidArgument("max_iter must be positive".into()));
        }
        let (lo, hi) = self.nu_bounds;
        if !(lo > 0.0) || !(lo < hi) || !hi.is_finite() {
            return Err(MvstError::InvalidArgument(format!("invalid nu bounds ({lo}, {hi})")));
        }
        if self.kmeans_restarts == 0 {
            return Err(MvstError::InvalidArgument("kmeans_restarts must be positive".into()));
        }
        if !(self.lambda_range.0 < self.lambda_range.1) {
            return Err(MvstError::InvalidArgument("lambda_range must have lower < upper".into()));
        }
        if !(self.nu_init > 0.0) {
            return Err(MvstError::InvalidArgument("nu_init must be positive".into()));
        }
        Ok(())
    }
}

/// Observed-data log-likelihood after each ECME iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub initial_loglik: f64,
    pub loglik_per_iter: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Posterior-moment evaluations whose t-cdf denominator fell below 1e-300.
    pub underflow_count: usize,
}

impl FitTrace {
    pub fn final_loglik(&self) -> f64 {
        self.loglik_per_iter.last().copied().unwrap_or(self.initial_loglik)
    }

    /// Largest decrease between consecutive log-likelihoods (initial value
    /// included); zero for a monotone trace.
    pub fn max_decrease(&self) -> f64 {
        std::iter::once(self.initial_loglik)
            .chain(self.loglik_per_iter.iter().copied())
            .collect::<Vec<_>>()
            .windows(2)
            .map(|w| w[0] - w[1])
            .fold(0.0, f64::max)
    }
}

pub(crate) fn relative_change(prev: f64, next: f64) -> f64 {
    (next - prev).abs() / (prev.abs() + 1.0)
}

/// Fixed-order pairwise sum.
pub(crate) fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

fn check_dims(data: &Dataset, theta: &MvstParams) -> Result<()> {
    if (data.rows(), data.cols()) != (theta.rows(), theta.cols()) {
        return Err(MvstError::DimensionMismatch {
            expected: format!("{}x{}", theta.rows(), theta.cols()),
            found: format!("{}x{}", data.rows(), data.cols()),
        });
    }
    Ok(())
}

pub(crate) fn all_forms(prepared: &PreparedComponent<'_>, data: &Dataset) -> Vec<QuadForms> {
    data.samples().par_iter().map(|y| prepared.forms_unchecked(y)).collect()
}

/// Σᵢ ln f(Yᵢ; θ).
pub fn loglik(data: &Dataset, theta: &MvstParams) -> Result<f64> {
    check_dims(data, theta)?;
    let prepared = PreparedComponent::new(theta)?;
    let kernel = DensityKernel::new(&prepared, theta.nu(), theta.variant());
    let values: Vec<f64> = all_forms(&prepared, data).iter().map(|f| kernel.eval(f)).collect();
    Ok(pairwise_sum(&values))
}

/// Per-sample posterior moments and the number of underflowing denominators.
pub fn e_step_single(data: &Dataset, theta: &MvstParams) -> Result<(Vec<PosteriorMoments>, usize)> {
    check_dims(data, theta)?;
    let prepared = PreparedComponent::new(theta)?;
    let np = prepared.np();
    let kernel = MomentKernel::new(theta.nu(), np, theta.variant());
    let out: Vec<(PosteriorMoments, bool)> = all_forms(&prepared, data).iter().map(|f| kernel.eval(f)).collect();
    let underflows = out.iter().filter(|(_, u)| *u).count();
    Ok((out.into_iter().map(|(m, _)| m).collect(), underflows))
}

/// The complete-data log-likelihood for given latent `(w, γ)` pairs, up to
/// additive constants. Requires a variant with finite ν.
pub fn complete_data_loglik(data: &Dataset, theta: &MvstParams, latents: &[(f64, f64)]) -> Result<f64> {
    if latents.len() != data.len() {
        return Err(MvstError::LengthMismatch { expected: data.len(), found: latents.len() });
    }
    if !theta.variant().has_nu() {
        return Err(MvstError::InvalidArgument("complete-data log-likelihood needs a finite nu".into()));
    }
    check_dims(data, theta)?;
    let prepared = PreparedComponent::new(theta)?;
    let (n, p) = (theta.rows() as f64, theta.cols() as f64);
    let nu = theta.nu();
    let ln_dets = p * prepared.sigma_factor().log_determinant() + n * prepared.psi_factor().log_determinant();
    let constant = nu * (0.5 * nu).ln() - 2.0 * ln_gamma(0.5 * nu) - ln_dets;
    let mut total = 0.0;
    for (y, &(w, gamma)) in data.iter().zip(latents) {
        let f = prepared.forms_unchecked(y);
        total += constant + 2.0 * f.eta * gamma * w - (f.rho + 1.0) * gamma * gamma * w - (f.delta + nu) * w
            + (nu + n * p - 1.0) * w.ln();
    }
    Ok(0.5 * total)
}

/// The Q-function with responsibilities `z` (all ones for a single
/// component), omitting the E(log W | Y) term, which does not involve
/// `M, Σ, Ψ, Λ`.
pub fn q_function(data: &Dataset, z: &[f64], moments: &[PosteriorMoments], theta: &MvstParams) -> Result<f64> {
    if z.len() != data.len() || moments.len() != data.len() {
        return Err(MvstError::LengthMismatch { expected: data.len(), found: z.len().min(moments.len()) });
    }
    check_dims(data, theta)?;
    let prepared = PreparedComponent::new(theta)?;
    let (n, p) = (theta.rows() as f64, theta.cols() as f64);
    let ln_dets = p * prepared.sigma_factor().log_determinant() + n * prepared.psi_factor().log_determinant();
    let nu = theta.nu();
    let nu_terms = |w: f64| {
        if nu.is_finite() {
            nu * (0.5 * nu).ln() - 2.0 * ln_gamma(0.5 * nu) - nu * w
        } else {
            0.0
        }
    };
    let mut total = 0.0;
    for ((y, &zi), m) in data.iter().zip(z).zip(moments) {
        let f = prepared.forms_unchecked(y);
        total += zi
            * (nu_terms(m.w_hat) - ln_dets + 2.0 * f.eta * m.kappa1_hat
                - (f.rho + 1.0) * m.kappa2_hat
                - f.delta * m.w_hat);
    }
    Ok(0.5 * total)
}

/// Updated `(M, Σ, Ψ, Λ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CmUpdate {
    pub m: Matrix,
    pub sigma: Matrix,
    pub psi: Matrix,
    pub lambda: Matrix,
}

/// Responsibility-weighted conditional maximization of `M`, `Σ`, `Ψ`, `Λ`.
/// `Σ` uses the current `Ψ, Λ`; `Ψ` uses the new `Σ` and current `Λ`; `Λ`
/// uses the new `M`.
pub(crate) fn weighted_cm_update(
    data: &Dataset,
    z: &[f64],
    moments: &[PosteriorMoments],
    theta: &MvstParams,
    label: &str,
) -> Result<CmUpdate> {
    let (n, p) = (theta.rows(), theta.cols());
    let skew = theta.variant().has_skew();
    let lambda = theta.lambda();

    let mut sum_z = 0.0;
    let mut sum_zw = 0.0;
    let mut sum_zk1 = 0.0;
    let mut sum_zk2 = 0.0;
    let mut weighted_y = Matrix::zeros(n, p);
    for ((y, &zi), mo) in data.iter().zip(z).zip(moments) {
        sum_z += zi;
        sum_zw += zi * mo.w_hat;
        sum_zk1 += zi * mo.kappa1_hat;
        sum_zk2 += zi * mo.kappa2_hat;
        weighted_y += y * (zi * mo.w_hat);
    }
    if !(sum_zw > 0.0) || !(sum_z > 0.0) {
        return Err(MvstError::DegenerateScatter(format!("{label}: zero total weight")));
    }

    let m = if skew { (weighted_y - lambda * sum_zk1) / sum_zw } else { weighted_y / sum_zw };
    let residuals: Vec<Matrix> = data.iter().map(|y| y - &m).collect();
    let mut skew_resid = Matrix::zeros(n, p);
    if skew {
        for ((r, &zi), mo) in residuals.iter().zip(z).zip(moments) {
            skew_resid += r * (zi * mo.kappa1_hat);
        }
    }

    // Σ given Ψ⁽ᵏ⁾, Λ⁽ᵏ⁾
    let (_, psi_factor) = spd_factorize_jittered(theta.psi(), label)?;
    let mut row_scatter = Matrix::zeros(n, n);
    for ((r, &zi), mo) in residuals.iter().zip(z).zip(moments) {
        let half = psi_factor.solve_lower(&r.transpose());
        row_scatter += half.transpose() * &half * (zi * mo.w_hat);
    }
    if skew {
        let lambda_psi = psi_factor.solve_right(lambda);
        let cross = &lambda_psi * skew_resid.transpose();
        row_scatter += &lambda_psi * lambda.transpose() * sum_zk2 - &cross - cross.transpose();
    }
    row_scatter /= p as f64 * sum_z;
    let (sigma, sigma_factor) = spd_factorize_jittered(&row_scatter, &format!("{label} Sigma"))?;

    // Ψ given Σ⁽ᵏ⁺¹⁾, Λ⁽ᵏ⁾
    let mut col_scatter = Matrix::zeros(p, p);
    for ((r, &zi), mo) in residuals.iter().zip(z).zip(moments) {
        let half = sigma_factor.solve_lower(r);
        col_scatter += half.transpose() * &half * (zi * mo.w_hat);
    }
    if skew {
        let sigma_lambda = sigma_factor.solve(lambda);
        let cross = skew_resid.transpose() * &sigma_lambda;
        col_scatter += lambda.transpose() * &sigma_lambda * sum_zk2 - &cross - cross.transpose();
    }
    col_scatter /= n as f64 * sum_z;
    let (psi, _) = spd_factorize_jittered(&col_scatter, &format!("{label} Psi"))?;

    let lambda = if skew {
        if !(sum_zk2 > 0.0) {
            return Err(MvstError::DegenerateScatter(format!("{label}: zero skewness weight")));
        }
        skew_resid / sum_zk2
    } else {
        Matrix::zeros(n, p)
    };
    Ok(CmUpdate { m, sigma, psi, lambda })
}

/// The four closed-form conditional-maximization updates for one component.
pub fn cm_updates(data: &Dataset, moments: &[PosteriorMoments], theta_current: &MvstParams) -> Result<CmUpdate> {
    if moments.len() != data.len() {
        return Err(MvstError::LengthMismatch { expected: data.len(), found: moments.len() });
    }
    check_dims(data, theta_current)?;
    let ones = vec![1.0; data.len()];
    weighted_cm_update(data, &ones, moments, theta_current, "component")
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;
pub(crate) const GOLDEN_ITERATIONS: usize = 60;
/// Bracket width in ln ν below which the search stops early.
pub(crate) const GOLDEN_TOL: f64 = 1e-9;

/// Golden-section maximization of `f(exp(t))` over `t ∈ [ln lo, ln hi]`.
/// Returns the best point seen together with its value.
pub(crate) fn golden_section_log<F: FnMut(f64) -> f64>(mut f: F, bounds: (f64, f64)) -> (f64, f64) {
    let (mut a, mut b) = (bounds.0.ln(), bounds.1.ln());
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let mut fc = f(c.exp());
    let mut fd = f(d.exp());
    let mut best = if fd > fc { (d.exp(), fd) } else { (c.exp(), fc) };
    for _ in 0..GOLDEN_ITERATIONS {
        if b - a < GOLDEN_TOL {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c.exp());
            if fc > best.1 {
                best = (c.exp(), fc);
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d.exp());
            if fd > best.1 {
                best = (d.exp(), fd);
            }
        }
    }
    best
}

/// Maximizes Σᵢ ln f(Yᵢ; M, Σ, Ψ, Λ, ν) over ν in `bounds`, never returning
/// a ν worse than the incumbent `theta_fixed.nu()`.
pub fn cml_nu(data: &Dataset, theta_fixed: &MvstParams, bounds: (f64, f64)) -> Result<f64> {
    check_dims(data, theta_fixed)?;
    if !(bounds.0 > 0.0) || !(bounds.0 < bounds.1) {
        return Err(MvstError::InvalidArgument(format!("invalid nu bounds {bounds:?}")));
    }
    let variant = theta_fixed.variant();
    if !variant.has_nu() {
        return Ok(theta_fixed.nu());
    }
    let prepared = PreparedComponent::new(theta_fixed)?;
    let forms = all_forms(&prepared, data);
    let objective = |nu: f64| {
        let kernel = DensityKernel::new(&prepared, nu, variant);
        let values: Vec<f64> = forms.iter().map(|f| kernel.eval(f)).collect();
        let v = pairwise_sum(&values);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let incumbent = theta_fixed.nu();
    let incumbent_value = objective(incumbent);
    let (nu, value) = golden_section_log(objective, bounds);
    Ok(if value > incumbent_value { nu } else { incumbent })
}

/// Divides Σ by Σ[1,1] and multiplies Ψ by it.
pub fn rescale_identifiability(sigma: &Matrix, psi: &Matrix) -> Result<(Matrix, Matrix)> {
    let s11 = sigma[(0, 0)];
    if !(s11 > 0.0) || !s11.is_finite() {
        return Err(MvstError::NotPositiveDefinite { pivot: 0 });
    }
    Ok((sigma / s11, psi * s11))
}

pub(crate) fn rescaled(theta: &MvstParams) -> Result<MvstParams> {
    let (sigma, psi) = rescale_identifiability(theta.sigma(), theta.psi())?;
    let mut out = theta.clone();
    out.set_scales(sigma, psi);
    Ok(out)
}

/// One ECME iteration: E-step, CMQ-steps for `M, Σ, Ψ, Λ`, CML-step for ν.
pub fn ecme_step(data: &Dataset, theta: &MvstParams, config: &FitConfig) -> Result<(MvstParams, usize)> {
    let (moments, underflows) = e_step_single(data, theta)?;
    let update = cm_updates(data, &moments, theta)?;
    let mut next = MvstParams::from_parts_unchecked(
        update.m,
        update.sigma,
        update.psi,
        update.lambda,
        theta.nu(),
        theta.variant(),
    );
    if next.variant().has_nu() {
        let nu = cml_nu(data, &next, config.nu_bounds)?;
        next = next.with_nu(nu);
    }
    if config.rescale_timing == RescaleTiming::PerIteration {
        next = rescaled(&next)?;
    }
    Ok((next, underflows))
}

/// Fits one component by ECME starting from `init`.
pub fn fit_single(data: &Dataset, init: &MvstParams, config: &FitConfig) -> Result<(MvstParams, FitTrace)> {
    config.validate()?;
    check_dims(data, init)?;
    if data.len() < 2 {
        return Err(MvstError::InvalidArgument("at least two observations are required".into()));
    }
    let initial_loglik = loglik(data, init)?;
    if !initial_loglik.is_finite() {
        return Err(MvstError::NonFiniteLoglik { iteration: 0 });
    }
    let mut theta = init.clone();
    let mut trace =
        FitTrace { initial_loglik, loglik_per_iter: Vec::new(), iterations: 0, converged: false, underflow_count: 0 };
    let mut prev = initial_loglik;
    for iteration in 1..=config.max_iter {
        let (next, underflows) = ecme_step(data, &theta, config)?;
        let ll = loglik(data, &next)?;
        if !ll.is_finite() {
            return Err(MvstError::NonFiniteLoglik { iteration });
        }
        theta = next;
        trace.underflow_count += underflows;
        trace.loglik_per_iter.push(ll);
        trace.iterations = iteration;
        if relative_change(prev, ll) < config.tol {
            trace.converged = true;
            break;
        }
        prev = ll;
    }
    if config.rescale_timing == RescaleTiming::AtConvergence {
        theta = rescaled(&theta)?;
    }
    Ok((theta, trace))
}
