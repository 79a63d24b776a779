//! Finite mixtures of matrix-variate skew-t components (and the reduced
//! variants): responsibilities, CM-steps, the ν sweep and MAP labels.

use rayon::prelude::*;

use crate::dist::{DensityKernel, MomentKernel, PosteriorMoments};
use crate::ecme::{
    golden_section_log, pairwise_sum, relative_change, rescaled, weighted_cm_update, FitConfig, FitTrace, RescaleTiming,
};
use crate::error::{MvstError, Result};
use crate::forms::{PreparedComponent, QuadForms};
use crate::init::{initial_params, kmeans_partition, InitSpec};
use crate::linalg::Matrix;
use crate::metrics;
use crate::model::{Dataset, MvstParams, Variant};

const WEIGHT_TOL: f64 = 1e-12;
const ROW_TOL: f64 = 1e-10;
/// Full cyclic passes over the components in the ν step.
pub const NU_CYCLES: usize = 2;

/// Mixing weights and components of a G-component mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    weights: Vec<f64>,
    components: Vec<MvstParams>,
}

impl MixtureParams {
    pub fn new(weights: Vec<f64>, components: Vec<MvstParams>) -> Result<Self> {
        if components.is_empty() {
            return Err(MvstError::InvalidArgument("a mixture needs at least one component".into()));
        }
        if weights.len() != components.len() {
            return Err(MvstError::LengthMismatch { expected: components.len(), found: weights.len() });
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(MvstError::Domain("mixing weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(MvstError::Domain(format!("mixing weights sum to {total}, not 1")));
        }
        let first = &components[0];
        for c in &components[1..] {
            if (c.rows(), c.cols()) != (first.rows(), first.cols()) {
                return Err(MvstError::DimensionMismatch {
                    expected: format!("{}x{}", first.rows(), first.cols()),
                    found: format!("{}x{}", c.rows(), c.cols()),
                });
            }
            if c.variant() != first.variant() {
                return Err(MvstError::InvalidArgument(format!(
                    "components mix variants {} and {}",
                    first.variant(),
                    c.variant()
                )));
            }
        }
        Ok(Self { weights, components })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn components(&self) -> &[MvstParams] {
        &self.components
    }
    pub fn groups(&self) -> usize {
        self.components.len()
    }
    pub fn variant(&self) -> Variant {
        self.components[0].variant()
    }
    pub fn rows(&self) -> usize {
        self.components[0].rows()
    }
    pub fn cols(&self) -> usize {
        self.components[0].cols()
    }

    /// ν of every component (`+∞` for variants without ν).
    pub fn nus(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.nu()).collect()
    }

    /// Components reordered so that new component `g` is old `order[g]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.groups()];
        if order.len() != self.groups()
            || order.iter().any(|&g| g >= seen.len() || std::mem::replace(&mut seen[g], true))
        {
            return Err(MvstError::InvalidArgument("order is not a permutation of the components".into()));
        }
        Ok(Self {
            weights: order.iter().map(|&g| self.weights[g]).collect(),
            components: order.iter().map(|&g| self.components[g].clone()).collect(),
        })
    }

    /// Every component's Σ divided by Σ[1,1] and Ψ multiplied by it.
    pub fn rescaled(&self) -> Result<Self> {
        let components = self.components.iter().map(rescaled).collect::<Result<Vec<_>>>()?;
        Ok(Self { weights: self.weights.clone(), components })
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if (data.rows(), data.cols()) != (self.rows(), self.cols()) {
            return Err(MvstError::DimensionMismatch {
                expected: format!("{}x{}", self.rows(), self.cols()),
                found: format!("{}x{}", data.rows(), data.cols()),
            });
        }
        Ok(())
    }
}

/// N × G posterior membership probabilities ẑ.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    z: Matrix,
}

impl Responsibilities {
    pub fn new(z: Matrix) -> Result<Self> {
        if z.ncols() == 0 || z.nrows() == 0 {
            return Err(MvstError::InvalidArgument("responsibilities must be non-empty".into()));
        }
        for (i, row) in z.row_iter().enumerate() {
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(MvstError::Domain(format!("responsibilities of sample {} are outside [0, 1]", i + 1)));
            }
            if (row.sum() - 1.0).abs() > ROW_TOL {
                return Err(MvstError::Domain(format!("responsibilities of sample {} do not sum to 1", i + 1)));
            }
        }
        Ok(Self { z })
    }

    /// One-hot responsibilities from 0-based component indices.
    pub fn from_hard(assignment: &[usize], groups: usize) -> Result<Self> {
        let mut z = Matrix::zeros(assignment.len(), groups);
        for (i, &g) in assignment.iter().enumerate() {
            if g >= groups {
                return Err(MvstError::InvalidArgument(format!("component {g} out of range for {groups} groups")));
            }
            z[(i, g)] = 1.0;
        }
        Self::new(z)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.z
    }
    pub fn len(&self) -> usize {
        self.z.nrows()
    }
    pub fn is_empty(&self) -> bool {
        self.z.nrows() == 0
    }
    pub fn groups(&self) -> usize {
        self.z.ncols()
    }
    pub fn column(&self, g: usize) -> Vec<f64> {
        self.z.column(g).iter().copied().collect()
    }
}

/// E-step output: ẑ, per-component moments indexed `[g][i]`, and the
/// log-likelihood of the parameters the E-step was run under.
#[derive(Debug, Clone)]
pub struct EStep {
    pub responsibilities: Responsibilities,
    pub moments: Vec<Vec<PosteriorMoments>>,
    pub loglik: f64,
    pub underflow_count: usize,
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn prepare_all(theta: &MixtureParams) -> Result<Vec<PreparedComponent<'_>>> {
    theta.components.iter().map(PreparedComponent::new).collect()
}

// forms[g][i]
fn forms_by_component(prepared: &[PreparedComponent<'_>], data: &Dataset) -> Vec<Vec<QuadForms>> {
    prepared.iter().map(|pc| data.samples().par_iter().map(|y| pc.forms_unchecked(y)).collect()).collect()
}

// ln π_g + ln f_g(Y_i), indexed [i][g]
fn weighted_log_densities(
    prepared: &[PreparedComponent<'_>],
    forms: &[Vec<QuadForms>],
    theta: &MixtureParams,
    nus: &[f64],
) -> Vec<Vec<f64>> {
    let n_obs = forms[0].len();
    let kernels: Vec<DensityKernel> =
        prepared.iter().zip(nus).map(|(pc, &nu)| DensityKernel::new(pc, nu, theta.variant())).collect();
    (0..n_obs)
        .into_par_iter()
        .map(|i| (0..prepared.len()).map(|g| theta.weights[g].ln() + kernels[g].eval(&forms[g][i])).collect())
        .collect()
}

fn row_logliks(table: &[Vec<f64>]) -> Result<Vec<f64>> {
    table
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let v = log_sum_exp(row);
            if v.is_nan() || v == f64::NEG_INFINITY {
                return Err(MvstError::NumericalRange(format!(
                    "every component density underflows at sample {}",
                    i + 1
                )));
            }
            Ok(v)
        })
        .collect()
}

/// Σᵢ ln Σ_g π_g f(Yᵢ; θ_g), with a log-sum-exp guard.
pub fn mixture_loglik(data: &Dataset, theta: &MixtureParams) -> Result<f64> {
    theta.check_data(data)?;
    let prepared = prepare_all(theta)?;
    let forms = forms_by_component(&prepared, data);
    let table = weighted_log_densities(&prepared, &forms, theta, &theta.nus());
    Ok(pairwise_sum(&row_logliks(&table)?))
}

/// Responsibilities and per-component posterior moments under `theta`.
pub fn e_step(data: &Dataset, theta: &MixtureParams) -> Result<EStep> {
    theta.check_data(data)?;
    let prepared = prepare_all(theta)?;
    let forms = forms_by_component(&prepared, data);
    let table = weighted_log_densities(&prepared, &forms, theta, &theta.nus());
    let lls = row_logliks(&table)?;
    let groups = theta.groups();
    let mut z = Matrix::zeros(data.len(), groups);
    for (i, (row, ll)) in table.iter().zip(&lls).enumerate() {
        for g in 0..groups {
            z[(i, g)] = (row[g] - ll).exp();
        }
        // exact renormalization against roundoff
        let s: f64 = z.row(i).sum();
        for g in 0..groups {
            z[(i, g)] /= s;
        }
    }
    let mut underflow_count = 0;
    let moments = prepared
        .iter()
        .zip(&forms)
        .map(|(pc, fg)| {
            let (nu, np, variant) = (pc.theta().nu(), pc.np(), pc.theta().variant());
            let kernel = MomentKernel::new(nu, np, variant);
            let pairs: Vec<(PosteriorMoments, bool)> = fg.iter().map(|f| kernel.eval(f)).collect();
            underflow_count += pairs.iter().filter(|(_, u)| *u).count();
            pairs.into_iter().map(|(m, _)| m).collect()
        })
        .collect();
    Ok(EStep { responsibilities: Responsibilities { z }, moments, loglik: pairwise_sum(&lls), underflow_count })
}

/// π̂ and the ẑ-weighted `M, Σ, Ψ, Λ` updates; ν is carried over unchanged.
pub fn mixture_cm_steps(data: &Dataset, estep: &EStep, theta: &MixtureParams) -> Result<MixtureParams> {
    theta.check_data(data)?;
    let z = &estep.responsibilities;
    if z.len() != data.len() || z.groups() != theta.groups() || estep.moments.len() != theta.groups() {
        return Err(MvstError::LengthMismatch { expected: data.len(), found: z.len() });
    }
    let np = theta.rows() * theta.cols();
    let threshold = np + 1;
    let n_obs = data.len() as f64;
    let columns: Vec<Vec<f64>> = (0..theta.groups()).map(|g| z.column(g)).collect();
    let counts: Vec<f64> = columns.iter().map(|c| pairwise_sum(c)).collect();
    for (g, &count) in counts.iter().enumerate() {
        if count < threshold as f64 {
            return Err(MvstError::DegenerateCluster { component: g + 1, effective_count: count, threshold });
        }
    }
    let total: f64 = counts.iter().sum();
    let weights: Vec<f64> = counts.iter().map(|c| c / total).collect();
    debug_assert!((total - n_obs).abs() < 1e-6 * n_obs);

    let components = theta
        .components
        .iter()
        .enumerate()
        .map(|(g, c)| {
            let u = weighted_cm_update(data, &columns[g], &estep.moments[g], c, &format!("component {}", g + 1))?;
            Ok(MvstParams::from_parts_unchecked(u.m, u.sigma, u.psi, u.lambda, c.nu(), c.variant()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MixtureParams { weights, components })
}

/// Cyclic golden-section maximization of the mixture log-likelihood over
/// (ν₁, …, ν_G), [`NU_CYCLES`] passes, other parameters fixed. Each
/// coordinate move is kept only if it improves on the incumbent.
pub fn mixture_cml_nu(data: &Dataset, theta: &MixtureParams, bounds: (f64, f64)) -> Result<Vec<f64>> {
    theta.check_data(data)?;
    if !(bounds.0 > 0.0) || !(bounds.0 < bounds.1) || !bounds.1.is_finite() {
        return Err(MvstError::InvalidArgument(format!("invalid nu bounds {bounds:?}")));
    }
    let mut nus = theta.nus();
    let variant = theta.variant();
    if !variant.has_nu() {
        return Ok(nus);
    }
    let prepared = prepare_all(theta)?;
    let forms = forms_by_component(&prepared, data);
    let mut table = weighted_log_densities(&prepared, &forms, theta, &nus);
    let groups = theta.groups();

    for _ in 0..NU_CYCLES {
        for g in 0..groups {
            let ln_pi = theta.weights[g].ln();
            let column = |nu: f64| -> Vec<f64> {
                let kernel = DensityKernel::new(&prepared[g], nu, variant);
                forms[g].par_iter().map(|f| ln_pi + kernel.eval(f)).collect()
            };
            // log-sum-exp of the other components' terms, fixed during the sweep
            let others: Vec<f64> = table
                .iter()
                .map(|row| {
                    log_sum_exp(&row.iter().enumerate().filter(|&(h, _)| h != g).map(|(_, &v)| v).collect::<Vec<_>>())
                })
                .collect();
            let objective = |col: &[f64]| -> f64 {
                let rows: Vec<f64> = others
                    .iter()
                    .zip(col)
                    .map(|(&o, &v)| {
                        if o == f64::NEG_INFINITY {
                            return v;
                        }
                        let (hi, lo) = if o >= v { (o, v) } else { (v, o) };
                        hi + (lo - hi).exp().ln_1p()
                    })
                    .collect();
                let total = pairwise_sum(&rows);
                if total.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    total
                }
            };
            let incumbent = objective(&column(nus[g]));
            let (nu, value) = golden_section_log(|nu| objective(&column(nu)), bounds);
            if value > incumbent {
                nus[g] = nu;
                for (row, v) in table.iter_mut().zip(column(nu)) {
                    row[g] = v;
                }
            }
        }
    }
    Ok(nus)
}

fn with_nus(theta: &MixtureParams, nus: &[f64]) -> MixtureParams {
    MixtureParams {
        weights: theta.weights.clone(),
        components: theta.components.iter().zip(nus).map(|(c, &nu)| c.with_nu(nu)).collect(),
    }
}

/// MAP labels, 1-based; ties go to the lowest component index.
pub fn classify(z: &Responsibilities) -> Vec<usize> {
    z.z.row_iter()
        .map(|row| {
            let mut best = 0;
            for g in 1..row.len() {
                if row[g] > row[best] {
                    best = g;
                }
            }
            best + 1
        })
        .collect()
}

/// Free parameters of a G-component mixture under the `Σ[1,1] = 1`
/// constraint.
pub fn parameter_count(variant: Variant, rows: usize, cols: usize, groups: usize) -> usize {
    let (n, p) = (rows, cols);
    let mut per = n * p + n * (n + 1) / 2 - 1 + p * (p + 1) / 2;
    if variant.has_skew() {
        per += n * p;
    }
    if variant.has_nu() {
        per += 1;
    }
    groups * per + groups - 1
}

/// Everything a mixture fit produces.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: MixtureParams,
    pub trace: FitTrace,
    pub responsibilities: Responsibilities,
    /// MAP labels, 1-based.
    pub labels: Vec<usize>,
    pub loglik: f64,
    pub bic: f64,
    pub n_params: usize,
    pub config: FitConfig,
}

/// One ECME iteration from a completed E-step.
pub fn mixture_ecme_step(
    data: &Dataset,
    estep: &EStep,
    theta: &MixtureParams,
    config: &FitConfig,
) -> Result<MixtureParams> {
    let mut next = mixture_cm_steps(data, estep, theta)?;
    if next.variant().has_nu() {
        let nus = mixture_cml_nu(data, &next, config.nu_bounds)?;
        next = with_nus(&next, &nus);
    }
    if config.rescale_timing == RescaleTiming::PerIteration {
        next = next.rescaled()?;
    }
    Ok(next)
}

/// ECME from given starting values.
pub fn fit_mixture_from(data: &Dataset, init: &MixtureParams, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    init.check_data(data)?;
    if init.variant() != config.variant {
        return Err(MvstError::InvalidArgument(format!(
            "starting values are {} but the config asks for {}",
            init.variant(),
            config.variant
        )));
    }
    let mut theta = init.clone();
    let mut estep = e_step(data, &theta)?;
    if !estep.loglik.is_finite() {
        return Err(MvstError::NonFiniteLoglik { iteration: 0 });
    }
    let mut trace = FitTrace {
        initial_loglik: estep.loglik,
        loglik_per_iter: Vec::new(),
        iterations: 0,
        converged: false,
        underflow_count: 0,
    };
    for iteration in 1..=config.max_iter {
        let next = mixture_ecme_step(data, &estep, &theta, config)?;
        let next_estep = e_step(data, &next)?;
        if !next_estep.loglik.is_finite() {
            return Err(MvstError::NonFiniteLoglik { iteration });
        }
        trace.underflow_count += estep.underflow_count;
        trace.loglik_per_iter.push(next_estep.loglik);
        trace.iterations = iteration;
        log::debug!("iteration {iteration}: loglik = {:.8}, nu = {:?}", next_estep.loglik, next.nus());
        let done = relative_change(estep.loglik, next_estep.loglik) < config.tol;
        theta = next;
        estep = next_estep;
        if done {
            trace.converged = true;
            break;
        }
    }
    if !trace.converged {
        log::warn!("ECME stopped at max_iter = {} without converging", config.max_iter);
    }
    if config.rescale_timing == RescaleTiming::AtConvergence {
        theta = theta.rescaled()?;
    }
    let labels = classify(&estep.responsibilities);
    let n_params = parameter_count(theta.variant(), theta.rows(), theta.cols(), theta.groups());
    let loglik = estep.loglik;
    Ok(FitResult {
        params: theta,
        trace,
        responsibilities: estep.responsibilities,
        labels,
        loglik,
        bic: metrics::bic(loglik, n_params, data.len()),
        n_params,
        config: config.clone(),
    })
}

/// K-means initialization followed by ECME.
pub fn fit_mixture(data: &Dataset, groups: usize, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    if groups == 0 {
        return Err(MvstError::InvalidArgument("groups must be positive".into()));
    }
    if data.len() <= groups {
        return Err(MvstError::InvalidArgument(format!(
            "need more observations ({}) than groups ({groups})",
            data.len()
        )));
    }
    let spec = InitSpec::from_config(config);
    let z0 = kmeans_partition(data, groups, &spec)?;
    let init = initial_params(data, &z0, &spec, config.variant)?;
    fit_mixture_from(data, &init, config)
}
