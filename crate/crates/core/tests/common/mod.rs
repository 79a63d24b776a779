//! Independent numerical oracles shared by the integration tests.
#![allow(dead_code)]

use mvst_core::{Dataset, Matrix, MvstParams, PosteriorMoments, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

/// A random SPD matrix with eigenvalues bounded away from zero.
pub fn random_spd(dim: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let a = random_matrix(dim, dim, 1.0, rng);
    &a * a.transpose() * 0.5 + Matrix::identity(dim, dim) * rng.random_range(0.4..1.2)
}

pub fn random_params(rows: usize, cols: usize, nu: f64, variant: Variant, rng: &mut ChaCha8Rng) -> MvstParams {
    let m = random_matrix(rows, cols, 1.0, rng);
    let sigma = random_spd(rows, rng);
    let psi = random_spd(cols, rng);
    let lambda = if variant.has_skew() { random_matrix(rows, cols, 1.5, rng) } else { Matrix::zeros(rows, cols) };
    MvstParams::new(m, sigma, psi, lambda, nu, variant).unwrap()
}

pub fn inverse(a: &Matrix) -> Matrix {
    a.clone().try_inverse().expect("invertible")
}

/// δ, η, ρ through explicit inverses and traces.
pub fn naive_forms(y: &Matrix, theta: &MvstParams) -> (f64, f64, f64) {
    let si = inverse(theta.sigma());
    let pi = inverse(theta.psi());
    let r = y - theta.m();
    let l = theta.lambda();
    let delta = (&si * &r * &pi * r.transpose()).trace();
    let eta = (&si * &r * &pi * l.transpose()).trace();
    let rho = (&si * l * &pi * l.transpose()).trace();
    (delta, eta, rho)
}

/// ln of the joint density of (Y, W = w, γ = g) from the hierarchical
/// representation: Y | w, g ~ MN(M + gΛ, Σ/w, Ψ), γ | w ~ HN(0, 1/w),
/// W ~ Gamma(ν/2, rate ν/2). Without ν the gamma factor is dropped and `w`
/// should be 1; without Λ the half-normal factor is dropped.
pub struct Joint {
    delta: f64,
    eta: f64,
    rho: f64,
    half_np: f64,
    base: f64,
    skew: bool,
    half_nu: Option<f64>,
}

impl Joint {
    pub fn new(y: &Matrix, theta: &MvstParams) -> Self {
        let (n, p) = (theta.rows() as f64, theta.cols() as f64);
        let (delta, eta, rho) = naive_forms(y, theta);
        let two_pi = 2.0 * std::f64::consts::PI;
        let mut base = -0.5 * n * p * two_pi.ln()
            - 0.5 * p * theta.sigma().determinant().ln()
            - 0.5 * n * theta.psi().determinant().ln();
        let skew = theta.variant().has_skew();
        if skew {
            base += 2f64.ln() - 0.5 * two_pi.ln();
        }
        let half_nu = theta.variant().has_nu().then(|| 0.5 * theta.nu());
        if let Some(a) = half_nu {
            base += a * a.ln() - ln_gamma(a);
        }
        Self { delta, eta, rho, half_np: 0.5 * n * p, base, skew, half_nu }
    }

    pub fn ln(&self, w: f64, g: f64) -> f64 {
        let q = self.delta - 2.0 * g * self.eta + g * g * self.rho;
        let mut out = self.base + self.half_np * w.ln() - 0.5 * w * q;
        if self.skew {
            out += 0.5 * w.ln() - 0.5 * w * g * g;
        }
        if let Some(a) = self.half_nu {
            out += (a - 1.0) * w.ln() - a * w;
        }
        out
    }
}

pub fn ln_joint(y: &Matrix, theta: &MvstParams, w: f64, g: f64) -> f64 {
    Joint::new(y, theta).ln(w, g)
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const G_WEIGHTS: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = GK_WEIGHTS[7] * fc;
    let mut gauss = G_WEIGHTS[3] * fc;
    for j in 0..7 {
        let x = h * GK_NODES[j];
        let s = f(c - x) + f(c + x);
        kron += GK_WEIGHTS[j] * s;
        if j % 2 == 1 {
            gauss += G_WEIGHTS[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod (7/15) integration of `f` over `[a, b]`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    let mut intervals = vec![(a, b, gk15(&mut f, a, b))];
    for _ in 0..5000 {
        let total: f64 = intervals.iter().map(|iv| iv.2 .0).sum();
        let err: f64 = intervals.iter().map(|iv| iv.2 .1).sum();
        if err <= rel_tol * total.abs() || err < 1e-300 {
            break;
        }
        let (k, _) = intervals.iter().enumerate().max_by(|x, y| x.1 .2 .1.partial_cmp(&y.1 .2 .1).unwrap()).unwrap();
        let (lo, hi, _) = intervals.swap_remove(k);
        let mid = 0.5 * (lo + hi);
        intervals.push((lo, mid, gk15(&mut f, lo, mid)));
        intervals.push((mid, hi, gk15(&mut f, mid, hi)));
    }
    intervals.iter().map(|iv| iv.2 .0).sum()
}

/// ∫₀^∞ f through x = t / (1 − t).
pub fn integrate_half_line<F: FnMut(f64) -> f64>(mut f: F, rel_tol: f64) -> f64 {
    integrate(
        |t| {
            if t >= 1.0 {
                return 0.0;
            }
            let x = t / (1.0 - t);
            let v = f(x) / ((1.0 - t) * (1.0 - t));
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        rel_tol,
    )
}

/// Nelder–Mead minimization; returns the best vertex and its value.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: f64,
    f_tol: f64,
    max_iter: usize,
) -> (Vec<f64>, f64) {
    let d = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..d {
        let mut x = x0.to_vec();
        x[i] += step;
        let v = f(&x);
        simplex.push((x, v));
    }
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        if (simplex[d].1 - simplex[0].1).abs() <= f_tol * (simplex[0].1.abs() + f_tol) {
            break;
        }
        let centroid: Vec<f64> = (0..d).map(|j| simplex[..d].iter().map(|s| s.0[j]).sum::<f64>() / d as f64).collect();
        let along =
            |t: f64, worst: &[f64]| -> Vec<f64> { centroid.iter().zip(worst).map(|(c, w)| c + t * (w - c)).collect() };
        let worst = simplex[d].0.clone();
        let xr = along(-1.0, &worst);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = along(-2.0, &worst);
            let fe = f(&xe);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[d].1 {
                let x = along(-0.5, &worst);
                let v = f(&x);
                (x, v)
            } else {
                let x = along(0.5, &worst);
                let v = f(&x);
                (x, v)
            };
            if fc < simplex[d].1.min(fr) {
                simplex[d] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for s in simplex.iter_mut().skip(1) {
                    s.0 = best.iter().zip(&s.0).map(|(b, x)| b + 0.5 * (x - b)).collect();
                    s.1 = f(&s.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    simplex.swap_remove(0)
}

/// Nelder–Mead restarted from its own optimum until the value stops moving.
pub fn minimize<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], step: f64) -> Vec<f64> {
    let (mut x, mut v) = nelder_mead(&mut f, x0, step, 1e-15, 20_000);
    let mut step = step;
    for _ in 0..20 {
        step *= 0.3;
        let (x2, v2) = nelder_mead(&mut f, &x, step.max(1e-7), 1e-15, 20_000);
        let done = v - v2 < 1e-14 * (v.abs() + 1.0);
        x = x2;
        v = v2;
        if done && step < 1e-4 {
            break;
        }
    }
    x
}

/// Symmetric positive-definite matrix from the free entries of a lower
/// Cholesky factor with log-diagonal.
pub fn spd_from_free(free: &[f64], dim: usize) -> Matrix {
    let mut l = Matrix::zeros(dim, dim);
    let mut k = 0;
    for i in 0..dim {
        for j in 0..=i {
            l[(i, j)] = if i == j { free[k].exp() } else { free[k] };
            k += 1;
        }
    }
    &l * l.transpose()
}

pub fn free_from_spd(a: &Matrix) -> Vec<f64> {
    let l = a.clone().cholesky().expect("SPD").l();
    let mut out = Vec::new();
    for i in 0..a.nrows() {
        for j in 0..=i {
            out.push(if i == j { l[(i, j)].ln() } else { l[(i, j)] });
        }
    }
    out
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).abs().max()
}

/// (E W, E γW, E γ²W) given Y by nested quadrature of the joint density.
pub fn moment_oracle(y: &Matrix, theta: &MvstParams) -> PosteriorMoments {
    let joint = Joint::new(y, theta);
    let shift = mvst_core::log_density(y, theta).unwrap();
    let inner = |w: f64, power: i32| integrate_half_line(|g| g.powi(power) * (joint.ln(w, g) - shift).exp(), 1e-12);
    let norm = integrate_half_line(|w| inner(w, 0), 1e-11);
    let w_hat = integrate_half_line(|w| w * inner(w, 0), 1e-11) / norm;
    let kappa1_hat = integrate_half_line(|w| w * inner(w, 1), 1e-11) / norm;
    let kappa2_hat = integrate_half_line(|w| w * inner(w, 2), 1e-11) / norm;
    PosteriorMoments { w_hat, kappa1_hat, kappa2_hat }
}

/// Σ_i z_i times the complete-data Q terms of one component that involve
/// (M, Σ, Ψ, Λ), written with explicit inverses.
pub fn q_block(
    data: &Dataset,
    z: &[f64],
    mo: &[PosteriorMoments],
    m: &Matrix,
    s: &Matrix,
    ps: &Matrix,
    l: &Matrix,
) -> f64 {
    let (n, p) = (m.nrows() as f64, m.ncols() as f64);
    let si = inverse(s);
    let pi = inverse(ps);
    let head = -0.5 * p * s.determinant().ln() - 0.5 * n * ps.determinant().ln();
    let lpl = l * &pi * l.transpose();
    data.iter()
        .zip(z)
        .zip(mo)
        .map(|((y, &zi), mo)| {
            let r = y - m;
            let rpl = &r * &pi * l.transpose();
            let inner =
                &r * &pi * r.transpose() * mo.w_hat - (&rpl + rpl.transpose()) * mo.kappa1_hat + &lpl * mo.kappa2_hat;
            zi * (head - 0.5 * (&si * inner).trace())
        })
        .sum()
}
