//! Parameter containers for a single matrix-variate skew-t component and
//! for matrix-valued datasets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{MvstError, Result};
use crate::linalg::{spd_factorize, Matrix};

/// One `n × p` observation.
pub type MatrixObservation = Matrix;

/// The model family. The skew-normal and normal members are the `ν → ∞`
/// limits of the skew-t and t members and are evaluated with their own
/// closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Mvst,
    Rmvsn,
    Mvt,
    Mvn,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Mvn, Variant::Mvt, Variant::Rmvsn, Variant::Mvst];

    /// Whether the variant carries a finite flatness parameter ν.
    pub fn has_nu(self) -> bool {
        matches!(self, Variant::Mvst | Variant::Mvt)
    }

    /// Whether the variant carries a skewness matrix Λ.
    pub fn has_skew(self) -> bool {
        matches!(self, Variant::Mvst | Variant::Rmvsn)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Mvst => "mvst",
            Variant::Rmvsn => "rmvsn",
            Variant::Mvt => "mvt",
            Variant::Mvn => "mvn",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = MvstError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mvst" => Ok(Variant::Mvst),
            "rmvsn" => Ok(Variant::Rmvsn),
            "mvt" => Ok(Variant::Mvt),
            "mvn" => Ok(Variant::Mvn),
            other => Err(MvstError::InvalidArgument(format!("unknown model variant '{other}'"))),
        }
    }
}

/// θ = (M, Σ, Ψ, Λ, ν) for one component.
///
/// For [`Variant::Rmvsn`] and [`Variant::Mvn`] ν is stored as `+∞`; for
/// [`Variant::Mvt`] and [`Variant::Mvn`] Λ is identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MvstParams {
    m: Matrix,
    sigma: Matrix,
    psi: Matrix,
    lambda: Matrix,
    nu: f64,
    variant: Variant,
}

impl MvstParams {
    pub fn new(m: Matrix, sigma: Matrix, psi: Matrix, lambda: Matrix, nu: f64, variant: Variant) -> Result<Self> {
        let (n, p) = m.shape();
        if sigma.shape() != (n, n) || psi.shape() != (p, p) || lambda.shape() != (n, p) {
            return Err(MvstError::DimensionMismatch {
                expected: format!("M {n}x{p}, Sigma {n}x{n}, Psi {p}x{p}, Lambda {n}x{p}"),
                found: format!("Sigma {:?}, Psi {:?}, Lambda {:?}", sigma.shape(), psi.shape(), lambda.shape()),
            });
        }
        spd_factorize(&sigma)?;
        spd_factorize(&psi)?;
        let nu = if variant.has_nu() {
            if !(nu > 0.0) || !nu.is_finite() {
                return Err(MvstError::Domain(format!("nu must be positive and finite, got {nu}")));
            }
            nu
        } else {
            f64::INFINITY
        };
        if !variant.has_skew() && lambda.iter().any(|&v| v != 0.0) {
            return Err(MvstError::InvalidArgument(format!("variant {variant} requires Lambda = 0")));
        }
        if m.iter().chain(lambda.iter()).any(|v| !v.is_finite()) {
            return Err(MvstError::Domain("M and Lambda must be finite".into()));
        }
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        let psi = (&psi + psi.transpose()) * 0.5;
        Ok(Self { m, sigma, psi, lambda, nu, variant })
    }

    /// A symmetric member (Λ = 0) of the requested variant family.
    pub fn symmetric(m: Matrix, sigma: Matrix, psi: Matrix, nu: f64, variant: Variant) -> Result<Self> {
        let lambda = Matrix::zeros(m.nrows(), m.ncols());
        Self::new(m, sigma, psi, lambda, nu, variant)
    }

    pub fn m(&self) -> &Matrix {
        &self.m
    }
    pub fn sigma(&self) -> &Matrix {
        &self.sigma
    }
    pub fn psi(&self) -> &Matrix {
        &self.psi
    }
    pub fn lambda(&self) -> &Matrix {
        &self.lambda
    }
    pub fn nu(&self) -> f64 {
        self.nu
    }
    pub fn variant(&self) -> Variant {
        self.variant
    }
    pub fn rows(&self) -> usize {
        self.m.nrows()
    }
    pub fn cols(&self) -> usize {
        self.m.ncols()
    }

    /// Same parameters with a different ν (ignored for variants without ν).
    pub fn with_nu(&self, nu: f64) -> Self {
        let mut out = self.clone();
        if self.variant.has_nu() {
            out.nu = nu;
        }
        out
    }

    /// Same parameters reinterpreted as another variant. Λ is zeroed and ν is
    /// set to the limit as required by the target.
    pub fn as_variant(&self, variant: Variant, nu: f64) -> Self {
        let lambda = if variant.has_skew() { self.lambda.clone() } else { Matrix::zeros(self.rows(), self.cols()) };
        let nu = if variant.has_nu() { nu } else { f64::INFINITY };
        Self { m: self.m.clone(), sigma: self.sigma.clone(), psi: self.psi.clone(), lambda, nu, variant }
    }

    /// Builds parameters without re-validating SPD-ness; callers guarantee it.
    pub(crate) fn from_parts_unchecked(
        m: Matrix,
        sigma: Matrix,
        psi: Matrix,
        lambda: Matrix,
        nu: f64,
        variant: Variant,
    ) -> Self {
        let nu = if variant.has_nu() { nu } else { f64::INFINITY };
        Self { m, sigma, psi, lambda, nu, variant }
    }

    pub(crate) fn set_scales(&mut self, sigma: Matrix, psi: Matrix) {
        self.sigma = sigma;
        self.psi = psi;
    }
}

/// N matrix observations sharing a common `n × p` shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: usize,
    cols: usize,
    samples: Vec<Matrix>,
}

impl Dataset {
    pub fn new(samples: Vec<Matrix>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| MvstError::InvalidArgument("dataset must contain at least one sample".into()))?;
        let (rows, cols) = first.shape();
        if rows == 0 || cols == 0 {
            return Err(MvstError::InvalidArgument("observations must be non-empty matrices".into()));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.shape() != (rows, cols) {
                return Err(MvstError::DimensionMismatch {
                    expected: format!("{rows}x{cols}"),
                    found: format!("{}x{} at sample {}", s.nrows(), s.ncols(), i + 1),
                });
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(MvstError::Domain(format!("sample {} has non-finite entries", i + 1)));
            }
        }
        Ok(Self { rows, cols, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn samples(&self) -> &[Matrix] {
        &self.samples
    }
    pub fn iter(&self) -> std::slice::Iter<'_, Matrix> {
        self.samples.iter()
    }

    /// Observations selected by index, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.samples[i].clone()).collect())
    }
}

impl std::ops::Index<usize> for Dataset {
    type Output = Matrix;

    fn index(&self, i: usize) -> &Matrix {
        &self.samples[i]
    }
}
