//! The matrix-variate skew-t distribution: log-density, sampling, posterior
//! moments of the latent variables and the mean.
//!
//! `Vec(Y)` follows a restricted multivariate skew-t law with scale `Ψ ⊗ Σ`;
//! that identity is not used by any code path here.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use crate::error::{MvstError, Result};
use crate::forms::{PreparedComponent, QuadForms};
use crate::linalg::Matrix;
use crate::model::{MvstParams, Variant};
use crate::special::{ln_gamma, ln_gamma_ratio, ln_norm_cdf, ln_norm_pdf, ln_t_cdf, LnTCdf, LN_2, LN_2PI};

/// ln(1e-300): t-cdf denominators below this are reported as underflow.
const LN_DENOMINATOR_FLOOR: f64 = -690.775_527_898_213_7;

/// Conditional expectations E(W|Y), E(γW|Y) and E(γ²W|Y).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorMoments {
    pub w_hat: f64,
    pub kappa1_hat: f64,
    pub kappa2_hat: f64,
}

/// The observation-independent part of the log-density for one component
/// at a given ν.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DensityKernel {
    variant: Variant,
    nu: f64,
    np: f64,
    constant: f64,
    t_cdf: Option<LnTCdf>,
}

impl DensityKernel {
    pub(crate) fn new(prepared: &PreparedComponent<'_>, nu: f64, variant: Variant) -> Self {
        let np = prepared.np();
        let base = prepared.ln_base();
        let (constant, t_cdf) = match variant {
            Variant::Mvst => (LN_2 + base + ln_gamma_ratio(0.5 * nu, 0.5 * np), Some(LnTCdf::new(nu + np))),
            Variant::Mvt => (base + ln_gamma_ratio(0.5 * nu, 0.5 * np), None),
            Variant::Rmvsn => (LN_2 + base, None),
            Variant::Mvn => (base, None),
        };
        Self { variant, nu, np, constant, t_cdf }
    }

    pub(crate) fn eval(&self, forms: &QuadForms) -> f64 {
        let (nu, np) = (self.nu, self.np);
        match (self.variant, &self.t_cdf) {
            (Variant::Mvst, Some(t_cdf)) => {
                let s = forms.residual();
                let k = nu + np;
                self.constant - 0.5 * nu * (s / nu).ln_1p() - 0.5 * np * (0.5 * (nu + s)).ln()
                    + t_cdf.eval(forms.cap_delta * (k / (nu + s)).sqrt())
            }
            (Variant::Mvt, _) => {
                let d = forms.delta;
                self.constant - 0.5 * nu * (d / nu).ln_1p() - 0.5 * np * (0.5 * (nu + d)).ln()
            }
            (Variant::Rmvsn, _) => self.constant - 0.5 * forms.residual() + ln_norm_cdf(forms.cap_delta),
            _ => self.constant - 0.5 * forms.delta,
        }
    }
}

/// Log-density from precomputed forms.
pub(crate) fn log_density_from_forms(
    prepared: &PreparedComponent<'_>,
    forms: &QuadForms,
    nu: f64,
    variant: Variant,
) -> f64 {
    DensityKernel::new(prepared, nu, variant).eval(forms)
}

/// ln f(Y; θ).
pub fn log_density(y: &Matrix, theta: &MvstParams) -> Result<f64> {
    let prepared = PreparedComponent::new(theta)?;
    let forms = prepared.forms(y)?;
    let v = log_density_from_forms(&prepared, &forms, theta.nu(), theta.variant());
    if v.is_nan() {
        return Err(MvstError::NumericalRange("log-density evaluated to NaN".into()));
    }
    Ok(v)
}

/// The observation-independent part of the posterior moments.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MomentKernel {
    variant: Variant,
    nu: f64,
    np: f64,
    t_k: LnTCdf,
    t_k2: LnTCdf,
    // ln Γ((k+1)/2) − ln Γ(k/2) − ½ ln 2π
    ln_zeta_const: f64,
}

impl MomentKernel {
    pub(crate) fn new(nu: f64, np: f64, variant: Variant) -> Self {
        let k = nu + np;
        let (t_k, t_k2, ln_zeta_const) = if nu.is_finite() {
            (LnTCdf::new(k), LnTCdf::new(k + 2.0), ln_gamma_ratio(0.5 * k, 0.5) - 0.5 * LN_2PI)
        } else {
            (LnTCdf::new(f64::INFINITY), LnTCdf::new(f64::INFINITY), 0.0)
        };
        Self { variant, nu, np, t_k, t_k2, ln_zeta_const }
    }

    /// Moments plus a flag telling whether the t-cdf (or Φ) denominator fell
    /// below 1e-300. The values are evaluated in the log domain either way.
    pub(crate) fn eval(&self, forms: &QuadForms) -> (PosteriorMoments, bool) {
        let rho1 = forms.rho + 1.0;
        let mu = forms.eta / rho1;
        match self.variant {
            Variant::Mvst | Variant::Mvt => {
                let (nu, k) = (self.nu, self.nu + self.np);
                let b = nu + forms.residual();
                let ln_den = self.t_k.eval(forms.cap_delta * (k / b).sqrt());
                let ln_num = self.t_k2.eval(forms.cap_delta * ((k + 2.0) / b).sqrt());
                let w_hat = ((k / b).ln() + ln_num - ln_den).exp();
                let ln_zeta = self.ln_zeta_const - ln_den - 0.5 * (k + 1.0) * (0.5 * (forms.delta + nu)).ln()
                    + 0.5 * k * (0.5 * b).ln();
                let zeta = ln_zeta.exp();
                let kappa1_hat = mu * w_hat + zeta / rho1.sqrt();
                let kappa2_hat = 1.0 / rho1 + mu * mu * w_hat + forms.eta / rho1.powf(1.5) * zeta;
                (PosteriorMoments { w_hat, kappa1_hat, kappa2_hat }, ln_den < LN_DENOMINATOR_FLOOR)
            }
            Variant::Rmvsn | Variant::Mvn => {
                let sd = 1.0 / rho1.sqrt();
                let ln_den = ln_norm_cdf(forms.cap_delta);
                let mills = (ln_norm_pdf(forms.cap_delta) - ln_den).exp();
                let kappa1_hat = mu + sd * mills;
                let kappa2_hat = mu * mu + sd * sd + mu * sd * mills;
                (PosteriorMoments { w_hat: 1.0, kappa1_hat, kappa2_hat }, ln_den < LN_DENOMINATOR_FLOOR)
            }
        }
    }
}

pub(crate) fn moments_from_forms(forms: &QuadForms, nu: f64, np: f64, variant: Variant) -> (PosteriorMoments, bool) {
    MomentKernel::new(nu, np, variant).eval(forms)
}

/// E(W|Y), E(γW|Y), E(γ²W|Y) under θ.
///
/// Fails with a range error when the t-cdf denominator drops below 1e-300,
/// which marks `y` as an extreme outlier under θ.
pub fn posterior_moments(y: &Matrix, theta: &MvstParams) -> Result<PosteriorMoments> {
    let prepared = PreparedComponent::new(theta)?;
    let forms = prepared.forms(y)?;
    let (moments, underflow) = moments_from_forms(&forms, theta.nu(), prepared.np(), theta.variant());
    if underflow {
        return Err(MvstError::NumericalRange("t-cdf denominator of the posterior moments is below 1e-300".into()));
    }
    if !moments.w_hat.is_finite() || !moments.kappa1_hat.is_finite() || !moments.kappa2_hat.is_finite() {
        return Err(MvstError::NumericalRange("posterior moments are not finite".into()));
    }
    Ok(moments)
}

/// Normalized ln f(w | Y), including the constant C.
pub fn posterior_w_logpdf(w: f64, y: &Matrix, theta: &MvstParams) -> Result<f64> {
    if !(w > 0.0) || !w.is_finite() {
        return Err(MvstError::Domain(format!("w must be positive, got {w}")));
    }
    if !theta.variant().has_nu() {
        return Err(MvstError::InvalidArgument(format!("W is degenerate at 1 for variant {}", theta.variant())));
    }
    let prepared = PreparedComponent::new(theta)?;
    let forms = prepared.forms(y)?;
    let nu = theta.nu();
    let k = nu + prepared.np();
    let b = nu + forms.residual();
    let ln_c = 0.5 * k * (0.5 * b).ln() - ln_gamma(0.5 * k) - ln_t_cdf(forms.cap_delta * (k / b).sqrt(), k);
    Ok(ln_c + (0.5 * k - 1.0) * w.ln() - 0.5 * w * b + ln_norm_cdf(w.sqrt() * forms.cap_delta))
}

/// E(Y) = M + c(ν)Λ with c(ν) = √(ν/π) Γ((ν−1)/2) / Γ(ν/2).
pub fn mean(theta: &MvstParams) -> Result<Matrix> {
    let scale = match theta.variant() {
        Variant::Mvst | Variant::Mvt => {
            let nu = theta.nu();
            if nu <= 1.0 {
                return Err(MvstError::Domain(format!("the mean requires nu > 1, got {nu}")));
            }
            if theta.variant() == Variant::Mvt {
                0.0
            } else {
                mean_skew_constant(nu)
            }
        }
        Variant::Rmvsn => (2.0 / std::f64::consts::PI).sqrt(),
        Variant::Mvn => 0.0,
    };
    Ok(theta.m() + theta.lambda() * scale)
}

/// E(W^{-1/2} U) for W ~ Gamma(ν/2, ν/2) and U standard half-normal.
pub fn mean_skew_constant(nu: f64) -> f64 {
    (0.5 * (nu / std::f64::consts::PI).ln() - ln_gamma_ratio(0.5 * (nu - 1.0), 0.5)).exp()
}

/// Draws from one component through `Y = M + W^{-1/2}(UΛ + Z)`.
#[derive(Debug, Clone)]
pub struct Sampler<'a> {
    theta: &'a MvstParams,
    l_sigma: Matrix,
    l_psi_t: Matrix,
    gamma: Option<Gamma<f64>>,
}

impl<'a> Sampler<'a> {
    pub fn new(theta: &'a MvstParams) -> Result<Self> {
        let prepared = PreparedComponent::new(theta)?;
        let gamma = if theta.variant().has_nu() {
            let nu = theta.nu();
            Some(Gamma::new(0.5 * nu, 2.0 / nu).map_err(|e| MvstError::Domain(e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            theta,
            l_sigma: prepared.sigma_factor().lower().clone(),
            l_psi_t: prepared.psi_factor().lower().transpose(),
            gamma,
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Matrix {
        let (n, p) = (self.theta.rows(), self.theta.cols());
        let x = Matrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut y = &self.l_sigma * x * &self.l_psi_t;
        if self.theta.variant().has_skew() {
            let u: f64 = rng.sample::<f64, _>(StandardNormal).abs();
            y += self.theta.lambda() * u;
        }
        if let Some(gamma) = &self.gamma {
            let w = gamma.sample(rng);
            y /= w.sqrt();
        }
        y + self.theta.m()
    }
}

/// Random number stream for draw `index` under `seed`. Every draw has its
/// own ChaCha8 stream, so output is independent of how work is partitioned.
pub fn draw_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `count` independent draws; draw `i` uses stream `i` of `seed`.
pub fn sample(theta: &MvstParams, count: usize, seed: u64) -> Result<Vec<Matrix>> {
    let sampler = Sampler::new(theta)?;
    Ok((0..count).into_par_iter().map(|i| sampler.draw(&mut draw_rng(seed, i as u64))).collect())
}
