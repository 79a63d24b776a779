//! Synthetic scenarios, mixture sampling and the replicated parameter
//! recovery and model comparison experiments.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{draw_rng, Sampler};
use crate::ecme::FitConfig;
use crate::error::{MvstError, Result};
use crate::linalg::{kronecker, Matrix};
use crate::metrics::{ari, best_relabeling, mcr};
use crate::mixture::{fit_mixture, FitResult, MixtureParams};
use crate::model::{Dataset, MvstParams, Variant};

/// Share of failed fits above which a cell is not summarized.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    I,
    II,
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioId::I => "I",
            ScenarioId::II => "II",
        })
    }
}

impl FromStr for ScenarioId {
    type Err = MvstError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(ScenarioId::I),
            "II" | "2" => Ok(ScenarioId::II),
            other => Err(MvstError::InvalidArgument(format!("unknown scenario '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub id: ScenarioId,
    pub params: MixtureParams,
}

fn mat(rows: usize, cols: usize, values: &[f64]) -> Matrix {
    Matrix::from_row_slice(rows, cols, values)
}

fn scenario_one() -> Result<MixtureParams> {
    let c1 = MvstParams::new(
        mat(3, 4, &[-1.0, 1.0, -1.0, 2.0, 0.0, 2.0, -1.0, 0.0, 0.0, 0.0, 0.0, -1.0]),
        mat(3, 3, &[1.0, 0.0, 0.0, 0.0, 0.7, -0.1, 0.0, -0.1, 1.0]),
        mat(4, 4, &[0.7, 0.0, 0.0, 0.0, 0.0, 1.0, -0.5, 0.5, 0.0, -0.5, 1.5, 0.1, 0.0, 0.5, 0.1, 1.0]),
        mat(3, 4, &[1.0, -2.0, 0.0, 1.0, 1.0, -2.0, 0.0, 1.0, 1.0, -2.0, 0.0, 1.0]),
        3.0,
        Variant::Mvst,
    )?;
    let c2 = MvstParams::new(
        mat(3, 4, &[0.0, 2.0, 0.0, 1.0, 0.0, 2.0, 0.0, -1.0, 0.0, 1.0, 1.0, -1.0]),
        mat(3, 3, &[1.0, 0.1, 0.2, 0.1, 0.5, -0.5, 0.2, -0.5, 1.4]),
        mat(4, 4, &[1.0, 0.5, 0.0, 0.0, 0.5, 1.0, 0.5, 0.5, 0.0, 0.5, 1.0, 0.1, 0.0, 0.5, 0.1, 1.0]),
        mat(3, 4, &[0.0, 1.0, -1.0, 0.0, 0.0, 1.0, -1.0, -1.0, 1.0, 1.0, 0.0, -1.0]),
        5.0,
        Variant::Mvst,
    )?;
    MixtureParams::new(vec![0.3, 0.7], vec![c1, c2])
}

fn scenario_two() -> Result<MixtureParams> {
    let ones = Matrix::from_element(5, 1, 1.0);
    let eye = Matrix::identity(5, 5);
    let c1 = MvstParams::new(
        kronecker(&mat(2, 2, &[-1.0, -1.0, 0.0, 1.0]), &ones),
        kronecker(&mat(2, 2, &[5.0, -0.5, -0.5, 1.0]), &eye),
        mat(2, 2, &[0.5, 0.0, 0.0, 0.5]),
        kronecker(&mat(2, 2, &[-2.0, 1.0, -2.0, 1.0]), &ones),
        4.0,
        Variant::Mvst,
    )?;
    let c2 = MvstParams::new(
        kronecker(&mat(2, 2, &[0.0, 0.0, 2.0, 1.0]), &ones),
        kronecker(&mat(2, 2, &[2.0, 0.1, 0.1, 0.5]), &eye),
        mat(2, 2, &[1.0, 0.5, 0.5, 1.0]),
        kronecker(&mat(2, 2, &[1.0, 2.0, 1.0, 2.0]), &ones),
        4.0,
        Variant::Mvst,
    )?;
    MixtureParams::new(vec![0.4, 0.6], vec![c1, c2])
}

/// The two generating mixtures of the simulation study.
pub fn scenario_params(id: ScenarioId) -> Result<ScenarioSpec> {
    let params = match id {
        ScenarioId::I => scenario_one()?,
        ScenarioId::II => scenario_two()?,
    };
    Ok(ScenarioSpec { id, params })
}

/// `count` draws from the mixture with their 1-based component labels.
/// Draw `i` uses its own stream of `seed` for both the label and the
/// observation.
pub fn generate_mixture_sample(theta: &MixtureParams, count: usize, seed: u64) -> Result<(Dataset, Vec<usize>)> {
    if count == 0 {
        return Err(MvstError::InvalidArgument("count must be at least 1".into()));
    }
    let samplers = theta.components().iter().map(Sampler::new).collect::<Result<Vec<_>>>()?;
    let weights = theta.weights();
    let draws: Vec<(Matrix, usize)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = draw_rng(seed, i as u64);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut g = weights.len() - 1;
            for (h, w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    g = h;
                    break;
                }
            }
            (samplers[g].draw(&mut rng), g + 1)
        })
        .collect();
    let (samples, labels) = draws.into_iter().unzip();
    Ok((Dataset::new(samples)?, labels))
}

/// One row of a tidy report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub n_obs: usize,
    pub model: Variant,
    pub statistic: String,
    pub value: f64,
    pub std_error: Option<f64>,
    pub replications: usize,
    pub failed: usize,
    pub seed_first: u64,
    pub seed_last: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub scenario: ScenarioId,
    pub base_seed: u64,
    pub replications: usize,
    pub config: FitConfig,
    pub cells: Vec<ReportCell>,
    /// Not serialized, so reports stay reproducible byte for byte.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

const CSV_HEADER: [&str; 11] = [
    "experiment",
    "scenario",
    "n_obs",
    "model",
    "statistic",
    "value",
    "std_error",
    "replications",
    "failed",
    "seed_first",
    "seed_last",
];

impl ExperimentReport {
    /// Value of a statistic, if present.
    pub fn value(&self, n_obs: usize, model: Variant, statistic: &str) -> Option<f64> {
        self.cells.iter().find(|c| c.n_obs == n_obs && c.model == model && c.statistic == statistic).map(|c| c.value)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for c in &self.cells {
            w.write_record([
                self.experiment.clone(),
                self.scenario.to_string(),
                c.n_obs.to_string(),
                c.model.to_string(),
                c.statistic.clone(),
                format!("{:.17e}", c.value),
                c.std_error.map(|s| format!("{s:.17e}")).unwrap_or_default(),
                c.replications.to_string(),
                c.failed.to_string(),
                c.seed_first.to_string(),
                c.seed_last.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write_files(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join(format!("{stem}.csv")))?)?;
        let mut json = std::fs::File::create(dir.join(format!("{stem}.json")))?;
        self.write_json(&mut json)?;
        json.write_all(b"\n")?;
        Ok(())
    }
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn check_failures(failed: usize, total: usize) -> Result<()> {
    if failed as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(MvstError::TooManyFailures { failed, total });
    }
    Ok(())
}

/// Order of fitted components matching truth components `0..G`, from the
/// MCR-optimal relabeling of the MAP labels.
pub fn align_components(truth: &[usize], fit: &FitResult) -> Result<Vec<usize>> {
    let groups = fit.params.groups();
    let (mapping, _) = best_relabeling(truth, &fit.labels)?;
    let mut order = vec![usize::MAX; groups];
    let mut used = vec![false; groups];
    for (&pred, &t) in &mapping {
        if (1..=groups).contains(&t) && (1..=groups).contains(&pred) && order[t - 1] == usize::MAX {
            order[t - 1] = pred - 1;
            used[pred - 1] = true;
        }
    }
    let mut spare = (0..groups).filter(|&g| !used[g]);
    for slot in order.iter_mut().filter(|s| **s == usize::MAX) {
        *slot = spare.next().expect("as many fitted as true components");
    }
    Ok(order)
}

// The scalar and matrix blocks compared in the recovery study.
fn parameter_blocks(theta: &MixtureParams) -> Vec<(String, Vec<f64>)> {
    let mut out = vec![("pi1".to_string(), vec![theta.weights()[0]])];
    let comps = theta.components();
    let flat = |m: &Matrix| m.iter().copied().collect::<Vec<f64>>();
    for (name, get) in [
        ("M", (|c: &MvstParams| c.m().clone()) as fn(&MvstParams) -> Matrix),
        ("Sigma", |c| c.sigma().clone()),
        ("Psi", |c| c.psi().clone()),
        ("Lambda", |c| c.lambda().clone()),
    ] {
        for (g, c) in comps.iter().enumerate() {
            out.push((format!("{name}{}", g + 1), flat(&get(c))));
        }
    }
    for (g, c) in comps.iter().enumerate() {
        out.push((format!("nu{}", g + 1), vec![c.nu()]));
    }
    for (g, c) in comps.iter().enumerate() {
        out.push((format!("PsiKronSigma{}", g + 1), flat(&kronecker(c.psi(), c.sigma()))));
    }
    out
}

fn experiment_seed(base: u64, replication: usize) -> u64 {
    base.wrapping_add(replication as u64)
}

/// Replicated parameter recovery of the skew-t mixture (G = 2).
///
/// For each size, replication `r` draws data with seed `seed + r`, fits from
/// a K-means start, aligns components to the truth through the MCR-optimal
/// relabeling and records squared errors. The reported RMSE of a block is
/// `√(mean over replications of squared error)` averaged over its entries.
/// Truth is compared after the `Σ[1,1] = 1` normalization; the product
/// `Ψ ⊗ Σ` is reported as well since it is free of that convention.
pub fn rmse_experiment(
    scenario: ScenarioId,
    sizes: &[usize],
    replications: usize,
    seed: u64,
    config: &FitConfig,
) -> Result<ExperimentReport> {
    if replications < 2 {
        return Err(MvstError::InvalidArgument("at least two replications are required".into()));
    }
    let start = Instant::now();
    let spec = scenario_params(scenario)?;
    let config = FitConfig { variant: Variant::Mvst, ..config.clone() };
    let truth_blocks = parameter_blocks(&spec.params.rescaled()?);
    let raw_truth = parameter_blocks(&spec.params);
    let mut cells = Vec::new();
    for &size in sizes {
        let outcomes: Vec<Option<Vec<(String, Vec<f64>)>>> = (0..replications)
            .into_par_iter()
            .map(|r| {
                let s = experiment_seed(seed, r);
                let run = || -> Result<Vec<(String, Vec<f64>)>> {
                    let (data, labels) = generate_mixture_sample(&spec.params, size, s)?;
                    let fit = fit_mixture(&data, 2, &FitConfig { seed: s, ..config.clone() })?;
                    let order = align_components(&labels, &fit)?;
                    Ok(parameter_blocks(&fit.params.permuted(&order)?))
                };
                match run() {
                    Ok(blocks) => Some(blocks),
                    Err(e) => {
                        log::warn!("replication {r} (N = {size}, seed {s}) failed: {e}");
                        None
                    }
                }
            })
            .collect();
        let ok: Vec<&Vec<(String, Vec<f64>)>> = outcomes.iter().flatten().collect();
        let failed = replications - ok.len();
        check_failures(failed, replications)?;
        let mut push = |statistic: String, value: f64| {
            cells.push(ReportCell {
                n_obs: size,
                model: Variant::Mvst,
                statistic,
                value,
                std_error: None,
                replications: ok.len(),
                failed,
                seed_first: experiment_seed(seed, 0),
                seed_last: experiment_seed(seed, replications - 1),
            })
        };
        let rmse_against = |truth: &[(String, Vec<f64>)], b: usize| -> f64 {
            let entries = truth[b].1.len();
            (0..entries)
                .map(|e| {
                    let mse = ok.iter().map(|est| (est[b].1[e] - truth[b].1[e]).powi(2)).sum::<f64>() / ok.len() as f64;
                    mse.sqrt()
                })
                .sum::<f64>()
                / entries as f64
        };
        for b in 0..truth_blocks.len() {
            let name = &truth_blocks[b].0;
            push(format!("rmse_{name}"), rmse_against(&truth_blocks, b));
            if name.starts_with("Sigma") || (name.starts_with("Psi") && !name.starts_with("PsiKron")) {
                push(format!("rmse_{name}_raw_truth"), rmse_against(&raw_truth, b));
            }
        }
    }
    let wall = start.elapsed().as_secs_f64();
    log::info!("rmse experiment, scenario {scenario}: {wall:.1} s");
    Ok(ExperimentReport {
        experiment: "rmse".into(),
        scenario,
        base_seed: seed,
        replications,
        config,
        cells,
        wall_clock_secs: wall,
    })
}

#[derive(Debug, Clone, Copy)]
struct FitScore {
    bic: f64,
    ari: f64,
    mcr: f64,
    loglik: f64,
}

/// Fits the four variants (G = 2) to the same replicated data and reports
/// mean and standard error of BIC, ARI and MCR for each.
pub fn comparison_experiment(
    scenario: ScenarioId,
    size: usize,
    replications: usize,
    seed: u64,
    config: &FitConfig,
) -> Result<ExperimentReport> {
    if replications < 2 {
        return Err(MvstError::InvalidArgument("at least two replications are required".into()));
    }
    let start = Instant::now();
    let spec = scenario_params(scenario)?;
    let scores: Vec<Vec<Option<FitScore>>> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let s = experiment_seed(seed, r);
            let data = generate_mixture_sample(&spec.params, size, s);
            Variant::ALL
                .iter()
                .map(|&variant| {
                    let (data, labels) = data.as_ref().ok()?;
                    let run = || -> Result<FitScore> {
                        let fit = fit_mixture(data, 2, &FitConfig { seed: s, variant, ..config.clone() })?;
                        Ok(FitScore {
                            bic: fit.bic,
                            ari: ari(labels, &fit.labels)?,
                            mcr: mcr(labels, &fit.labels)?,
                            loglik: fit.loglik,
                        })
                    };
                    run().map_err(|e| log::warn!("replication {r}, {variant} (seed {s}) failed: {e}")).ok()
                })
                .collect()
        })
        .collect();
    let mut cells = Vec::new();
    for (v, &variant) in Variant::ALL.iter().enumerate() {
        let ok: Vec<FitScore> = scores.iter().filter_map(|row| row[v]).collect();
        let failed = replications - ok.len();
        check_failures(failed, replications)?;
        let stats: [(&str, fn(&FitScore) -> f64); 4] =
            [("bic", |s| s.bic), ("ari", |s| s.ari), ("mcr", |s| s.mcr), ("loglik", |s| s.loglik)];
        for (name, get) in stats {
            let values: Vec<f64> = ok.iter().map(get).collect();
            let (mean, se) = mean_and_se(&values);
            cells.push(ReportCell {
                n_obs: size,
                model: variant,
                statistic: name.into(),
                value: mean,
                std_error: Some(se),
                replications: ok.len(),
                failed,
                seed_first: experiment_seed(seed, 0),
                seed_last: experiment_seed(seed, replications - 1),
            });
        }
    }
    let wall = start.elapsed().as_secs_f64();
    log::info!("comparison experiment, scenario {scenario}: {wall:.1} s");
    Ok(ExperimentReport {
        experiment: "compare".into(),
        scenario,
        base_seed: seed,
        replications,
        config: config.clone(),
        cells,
        wall_clock_secs: wall,
    })
}
