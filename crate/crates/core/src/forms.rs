//! Scalar quadratic forms δ, ρ, η, Δ and the ζ(Y) term of the posterior
//! moments.

use crate::error::{MvstError, Result};
use crate::linalg::{frobenius_inner, spd_factorize, Matrix, SpdFactor};
use crate::model::{MvstParams, Variant};
use crate::special::{ln_gamma_ratio, ln_norm_cdf, ln_norm_pdf, ln_t_cdf, LN_2PI};

/// Largest log-magnitude accepted before declaring a range error.
pub(crate) const MAX_LOG_MAGNITUDE: f64 = 700.0;

/// The four trace forms of an observation under one component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadForms {
    /// tr[Σ⁻¹(Y−M)Ψ⁻¹(Y−M)ᵀ]
    pub delta: f64,
    /// tr[Σ⁻¹ΛΨ⁻¹Λᵀ]
    pub rho: f64,
    /// tr[Σ⁻¹(Y−M)Ψ⁻¹Λᵀ]
    pub eta: f64,
    /// η / √(ρ + 1)
    pub cap_delta: f64,
}

impl QuadForms {
    /// δ − Δ², clamped at zero against roundoff.
    pub fn residual(&self) -> f64 {
        (self.delta - self.cap_delta * self.cap_delta).max(0.0)
    }
}

/// A component with its scale matrices factorized, ready to evaluate the
/// trace forms of many observations.
#[derive(Debug, Clone)]
pub struct PreparedComponent<'a> {
    theta: &'a MvstParams,
    sigma: SpdFactor,
    psi: SpdFactor,
    // Σ⁻¹ Λ Ψ⁻¹
    skew_precision: Matrix,
    rho: f64,
    // -(p/2) ln|Σ| - (n/2) ln|Ψ| - (np/2) ln 2π - ½ ln(ρ+1)
    ln_base: f64,
}

impl<'a> PreparedComponent<'a> {
    pub fn new(theta: &'a MvstParams) -> Result<Self> {
        let sigma = spd_factorize(theta.sigma())?;
        let psi = spd_factorize(theta.psi())?;
        let skew_precision = psi.solve_right(&sigma.solve(theta.lambda()));
        let rho = frobenius_inner(theta.lambda(), &skew_precision).max(0.0);
        let (n, p) = (theta.rows() as f64, theta.cols() as f64);
        let ln_base = -0.5 * p * sigma.log_determinant()
            - 0.5 * n * psi.log_determinant()
            - 0.5 * n * p * LN_2PI
            - 0.5 * rho.ln_1p();
        Ok(Self { theta, sigma, psi, skew_precision, rho, ln_base })
    }

    pub fn theta(&self) -> &MvstParams {
        self.theta
    }

    pub fn sigma_factor(&self) -> &SpdFactor {
        &self.sigma
    }

    pub fn psi_factor(&self) -> &SpdFactor {
        &self.psi
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub(crate) fn ln_base(&self) -> f64 {
        self.ln_base
    }

    pub(crate) fn np(&self) -> f64 {
        (self.theta.rows() * self.theta.cols()) as f64
    }

    pub fn forms(&self, y: &Matrix) -> Result<QuadForms> {
        if y.shape() != self.theta.m().shape() {
            return Err(MvstError::DimensionMismatch {
                expected: format!("{}x{}", self.theta.rows(), self.theta.cols()),
                found: format!("{}x{}", y.nrows(), y.ncols()),
            });
        }
        Ok(self.forms_unchecked(y))
    }

    pub(crate) fn forms_unchecked(&self, y: &Matrix) -> QuadForms {
        let resid = y - self.theta.m();
        // ‖L_Σ⁻¹ R L_Ψ⁻ᵀ‖²_F
        let left = self.sigma.solve_lower(&resid);
        let both = self.psi.solve_lower(&left.transpose());
        let delta = both.norm_squared();
        let eta = frobenius_inner(&resid, &self.skew_precision);
        let cap_delta = eta / (self.rho + 1.0).sqrt();
        QuadForms { delta, rho: self.rho, eta, cap_delta }
    }
}

/// δ, ρ, η and Δ of `y` under `theta`.
pub fn quad_forms(y: &Matrix, theta: &MvstParams) -> Result<QuadForms> {
    PreparedComponent::new(theta)?.forms(y)
}

/// ln ζ(Y) from precomputed forms. `nu = ∞` gives the skew-normal limit,
/// the inverse Mills ratio φ(Δ)/Φ(Δ).
pub(crate) fn ln_zeta_from_forms(forms: &QuadForms, nu: f64, np: f64) -> f64 {
    if nu.is_infinite() {
        return ln_norm_pdf(forms.cap_delta) - ln_norm_cdf(forms.cap_delta);
    }
    let k = nu + np;
    let b = nu + forms.residual();
    let ln_t = ln_t_cdf(forms.cap_delta * (k / b).sqrt(), k);
    ln_gamma_ratio(0.5 * k, 0.5) - 0.5 * LN_2PI - ln_t - 0.5 * (k + 1.0) * (0.5 * (forms.delta + nu)).ln()
        + 0.5 * k * (0.5 * b).ln()
}

/// ζ(Y) entering E(γW|Y) and E(γ²W|Y).
pub fn zeta(y: &Matrix, theta: &MvstParams) -> Result<f64> {
    let prepared = PreparedComponent::new(theta)?;
    let forms = prepared.forms(y)?;
    let nu = match theta.variant() {
        Variant::Mvst | Variant::Mvt => theta.nu(),
        Variant::Rmvsn | Variant::Mvn => f64::INFINITY,
    };
    let ln_z = ln_zeta_from_forms(&forms, nu, prepared.np());
    if !ln_z.is_finite() || ln_z.abs() > MAX_LOG_MAGNITUDE {
        return Err(MvstError::NumericalRange(format!("ln zeta = {ln_z} is out of range")));
    }
    Ok(ln_z.exp())
}
