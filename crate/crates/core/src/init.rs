//! Starting values: a K-means partition of `Vec(Yᵢ)`, moment-based
//! `M, Σ, Ψ` per cluster, uniform random `Λ` and a fixed ν.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ecme::FitConfig;
use crate::error::{MvstError, Result};
use crate::linalg::{spd_factorize_jittered, Matrix};
use crate::mixture::{MixtureParams, Responsibilities};
use crate::model::{Dataset, MvstParams, Variant};

/// Lloyd iterations per restart.
pub const KMEANS_MAX_ITER: usize = 100;
// RNG stream used for Λ draws; K-means restarts use streams 0, 1, ...
const LAMBDA_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct InitSpec {
    pub kmeans_restarts: usize,
    pub lambda_range: (f64, f64),
    pub nu_init: f64,
    pub seed: u64,
}

impl Default for InitSpec {
    fn default() -> Self {
        Self { kmeans_restarts: 10, lambda_range: (-1.0, 1.0), nu_init: 5.0, seed: 0 }
    }
}

impl InitSpec {
    pub fn from_config(config: &FitConfig) -> Self {
        Self {
            kmeans_restarts: config.kmeans_restarts,
            lambda_range: config.lambda_range,
            nu_init: config.nu_init,
            seed: config.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kmeans_restarts == 0 {
            return Err(MvstError::InvalidArgument("kmeans_restarts must be positive".into()));
        }
        if !(self.lambda_range.0 < self.lambda_range.1) {
            return Err(MvstError::InvalidArgument("lambda_range must have lower < upper".into()));
        }
        if !(self.nu_init > 0.0) || !self.nu_init.is_finite() {
            return Err(MvstError::InvalidArgument("nu_init must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of the best K-means restart.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// 0-based cluster of every observation.
    pub assignment: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub sse: f64,
    pub restart: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (g, c) in centers.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (g, d);
        }
    }
    best
}

fn plus_plus_seeds(points: &[Vec<f64>], groups: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < groups {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[pick].clone());
        for (d, x) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(x, &centers[centers.len() - 1]));
        }
    }
    centers
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> (Vec<usize>, Vec<Vec<f64>>, f64) {
    let groups = centers.len();
    let dim = points[0].len();
    let mut assignment = vec![usize::MAX; points.len()];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (a, x) in assignment.iter_mut().zip(points) {
            let (g, _) = nearest(x, &centers);
            if *a != g {
                *a = g;
                changed = true;
            }
        }
        let mut counts = vec![0usize; groups];
        let mut sums = vec![vec![0.0; dim]; groups];
        for (&g, x) in assignment.iter().zip(points) {
            counts[g] += 1;
            for (s, v) in sums[g].iter_mut().zip(x) {
                *s += v;
            }
        }
        for g in 0..groups {
            if counts[g] == 0 {
                // reseed to the point farthest from its own center
                let far = points
                    .iter()
                    .zip(&assignment)
                    .enumerate()
                    .map(|(i, (x, &a))| (i, sq_dist(x, &centers[a])))
                    .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
                    .0;
                centers[g] = points[far].clone();
                assignment[far] = g;
                changed = true;
            } else {
                centers[g] = sums[g].iter().map(|s| s / counts[g] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    let sse = points.iter().zip(&assignment).map(|(x, &g)| sq_dist(x, &centers[g])).sum();
    (assignment, centers, sse)
}

fn vectorized(data: &Dataset) -> Vec<Vec<f64>> {
    data.iter().map(|y| y.iter().copied().collect()).collect()
}

/// Best of `spec.kmeans_restarts` seeded k-means++ / Lloyd runs on `Vec(Yᵢ)`
/// (lowest SSE, ties by restart index).
pub fn kmeans(data: &Dataset, groups: usize, spec: &InitSpec) -> Result<KMeans> {
    spec.validate()?;
    if groups == 0 {
        return Err(MvstError::InvalidArgument("groups must be positive".into()));
    }
    if data.len() < groups {
        return Err(MvstError::InvalidArgument(format!(
            "cannot form {groups} clusters from {} observations",
            data.len()
        )));
    }
    let points = vectorized(data);
    let runs: Vec<KMeans> = (0..spec.kmeans_restarts)
        .into_par_iter()
        .map(|restart| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(restart as u64);
            let seeds = plus_plus_seeds(&points, groups, &mut rng);
            let (assignment, centers, sse) = lloyd(&points, seeds);
            KMeans { assignment, centers, sse, restart }
        })
        .collect();
    let best = runs.into_iter().reduce(|a, b| if b.sse < a.sse { b } else { a }).expect("at least one restart");
    Ok(best)
}

/// Hard 0/1 responsibilities from [`kmeans`].
pub fn kmeans_partition(data: &Dataset, groups: usize, spec: &InitSpec) -> Result<Responsibilities> {
    let km = kmeans(data, groups, spec)?;
    Responsibilities::from_hard(&km.assignment, groups)
}

/// Weighted mean, row and column scatter, random Λ and ν = `nu_init`.
pub fn initial_params(
    data: &Dataset,
    z0: &Responsibilities,
    spec: &InitSpec,
    variant: Variant,
) -> Result<MixtureParams> {
    spec.validate()?;
    if z0.len() != data.len() {
        return Err(MvstError::LengthMismatch { expected: data.len(), found: z0.len() });
    }
    let (n, p) = (data.rows(), data.cols());
    let groups = z0.groups();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(LAMBDA_STREAM);
    let (lo, hi) = spec.lambda_range;
    let mut weights = Vec::with_capacity(groups);
    let mut components = Vec::with_capacity(groups);
    for g in 0..groups {
        let z = z0.column(g);
        let members = z.iter().filter(|&&v| v > 0.0).count();
        if members < 2 {
            return Err(MvstError::DegenerateInit { cluster: g + 1, count: members });
        }
        let count: f64 = z.iter().sum();
        let mut m = Matrix::zeros(n, p);
        for (y, &w) in data.iter().zip(&z) {
            m += y * w;
        }
        m /= count;
        let mut sigma = Matrix::zeros(n, n);
        let mut psi = Matrix::zeros(p, p);
        for (y, &w) in data.iter().zip(&z) {
            if w == 0.0 {
                continue;
            }
            let r = y - &m;
            sigma += &r * r.transpose() * w;
            psi += r.transpose() * &r * w;
        }
        sigma /= p as f64 * count;
        psi /= n as f64 * count;
        let (sigma, _) = spd_factorize_jittered(&sigma, &format!("initial Sigma of cluster {}", g + 1))?;
        let (psi, _) = spd_factorize_jittered(&psi, &format!("initial Psi of cluster {}", g + 1))?;
        let lambda = if variant.has_skew() {
            Matrix::from_fn(n, p, |_, _| rng.random_range(lo..hi))
        } else {
            Matrix::zeros(n, p)
        };
        weights.push(count / data.len() as f64);
        components.push(MvstParams::new(m, sigma, psi, lambda, spec.nu_init, variant)?);
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    MixtureParams::new(weights, components)
}
