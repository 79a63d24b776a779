mod common;

use common::{random_matrix, random_params, random_spd, rng};
use mvst_core::init::{initial_params, InitSpec};
use mvst_core::io::{fit_result_from_json, fit_result_to_json, parse_dataset, write_dataset_to};
use mvst_core::mixture::e_step;
use mvst_core::sim::generate_mixture_sample;
use mvst_core::{
    ari, classify, log_density, mcr, posterior_moments, quad_forms, spd_factorize, student_t_cdf, Dataset, FitConfig,
    Matrix, MixtureParams, MvstParams, Responsibilities, Variant,
};
use proptest::prelude::*;
use rand::Rng;

fn variant_strategy() -> impl Strategy<Value = Variant> {
    prop::sample::select(Variant::ALL.to_vec())
}

fn params_strategy() -> impl Strategy<Value = MvstParams> {
    (1usize..4, 1usize..4, 0.3f64..40.0, variant_strategy(), any::<u64>())
        .prop_map(|(n, p, nu, variant, seed)| random_params(n, p, nu, variant, &mut rng(seed)))
}

fn point_for(theta: &MvstParams, seed: u64, spread: f64) -> Matrix {
    theta.m() + random_matrix(theta.rows(), theta.cols(), spread, &mut rng(seed))
}

fn scaled(theta: &MvstParams, c: f64) -> MvstParams {
    MvstParams::new(
        theta.m().clone(),
        theta.sigma() / c,
        theta.psi() * c,
        theta.lambda().clone(),
        theta.nu(),
        theta.variant(),
    )
    .unwrap()
}

fn mixture_for(seed: u64, groups: usize, variant: Variant) -> MixtureParams {
    let mut r = rng(seed);
    let (n, p) = (r.random_range(1..4), r.random_range(1..4));
    let comps: Vec<MvstParams> =
        (0..groups).map(|_| random_params(n, p, r.random_range(1.5..20.0), variant, &mut r)).collect();
    let raw: Vec<f64> = (0..groups).map(|_| r.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let head: f64 = weights[..groups - 1].iter().sum();
    weights[groups - 1] = 1.0 - head;
    MixtureParams::new(weights, comps).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn factor_reconstructs_and_log_det_matches(dim in 1usize..6, seed in any::<u64>()) {
        let a = random_spd(dim, &mut rng(seed));
        let f = spd_factorize(&a).unwrap();
        let err = (f.reconstruct() - &a).norm() / a.norm();
        prop_assert!(err < 1e-10);
        let from_diag: f64 = f.lower().diagonal().iter().map(|v| (v * v).ln()).sum();
        prop_assert!((f.log_determinant() - from_diag).abs() < 1e-12 * (1.0 + from_diag.abs()));
    }

    #[test]
    fn t_cdf_is_symmetric(x in -50.0f64..50.0, df in 0.1f64..200.0) {
        let total = student_t_cdf(x, df).unwrap() + student_t_cdf(-x, df).unwrap();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quad_form_bounds(theta in params_strategy(), seed in any::<u64>()) {
        let y = point_for(&theta, seed, 3.0);
        let q = quad_forms(&y, &theta).unwrap();
        prop_assert!(q.delta >= 0.0 && q.rho >= 0.0);
        prop_assert!(q.cap_delta * q.cap_delta <= q.delta * q.rho / (q.rho + 1.0) * (1.0 + 1e-10) + 1e-12);
        prop_assert_eq!(q.cap_delta, q.eta / (q.rho + 1.0).sqrt());
    }

    #[test]
    fn quad_forms_and_density_survive_kronecker_rescale(theta in params_strategy(), seed in any::<u64>(), c in 0.05f64..20.0) {
        let y = point_for(&theta, seed, 2.0);
        let other = scaled(&theta, c);
        let (a, b) = (quad_forms(&y, &theta).unwrap(), quad_forms(&y, &other).unwrap());
        for (u, v) in [(a.delta, b.delta), (a.rho, b.rho), (a.eta, b.eta)] {
            prop_assert!((u - v).abs() <= 1e-10 * u.abs().max(1e-8));
        }
        let (la, lb) = (log_density(&y, &theta).unwrap(), log_density(&y, &other).unwrap());
        prop_assert!((la - lb).abs() < 1e-10 * la.abs().max(1.0));
    }

    #[test]
    fn density_is_finite(theta in params_strategy(), seed in any::<u64>(), spread in 0.0f64..1e3) {
        let y = point_for(&theta, seed, spread.max(1e-9));
        prop_assert!(log_density(&y, &theta).unwrap().is_finite());
    }

    #[test]
    fn skew_free_mvst_equals_mvt(theta in params_strategy(), seed in any::<u64>()) {
        let sym = MvstParams::symmetric(theta.m().clone(), theta.sigma().clone(), theta.psi().clone(), 4.5, Variant::Mvst).unwrap();
        let t = sym.as_variant(Variant::Mvt, 4.5);
        let y = point_for(&theta, seed, 3.0);
        let (a, b) = (log_density(&y, &sym).unwrap(), log_density(&y, &t).unwrap());
        prop_assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn posterior_moments_obey_cauchy_schwarz(theta in params_strategy(), seed in any::<u64>()) {
        let theta = theta.as_variant(Variant::Mvst, theta.nu().min(40.0));
        let y = point_for(&theta, seed, 3.0);
        let m = posterior_moments(&y, &theta).unwrap();
        prop_assert!(m.w_hat > 0.0 && m.kappa2_hat > 0.0);
        prop_assert!(m.kappa1_hat * m.kappa1_hat <= m.w_hat * m.kappa2_hat * (1.0 + 1e-10));
    }

    #[test]
    fn responsibilities_are_distributions(seed in any::<u64>(), groups in 1usize..4, variant in variant_strategy()) {
        let theta = mixture_for(seed, groups, variant);
        let (data, _) = generate_mixture_sample(&theta, 40, seed).unwrap();
        let z = e_step(&data, &theta).unwrap().responsibilities;
        for i in 0..z.len() {
            let row = z.matrix().row(i);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.sum() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn map_labels_survive_rescaling(seed in any::<u64>(), c in 0.1f64..10.0) {
        let theta = mixture_for(seed, 2, Variant::Mvst);
        let comps: Vec<MvstParams> = theta.components().iter().map(|t| scaled(t, c)).collect();
        let raw = MixtureParams::new(theta.weights().to_vec(), comps).unwrap();
        let (data, _) = generate_mixture_sample(&theta, 50, seed).unwrap();
        let a = classify(&e_step(&data, &raw).unwrap().responsibilities);
        let b = classify(&e_step(&data, &raw.rescaled().unwrap()).unwrap().responsibilities);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn ari_is_symmetric_and_relabel_invariant(
        a in prop::collection::vec(1usize..5, 2..60),
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let b: Vec<usize> = a.iter().map(|_| r.random_range(1..5)).collect();
        let perm = [0usize, 3, 1, 4, 2];
        let b_relabeled: Vec<usize> = b.iter().map(|&l| perm[l]).collect();
        let ab = ari(&a, &b).unwrap();
        prop_assert!((ab - ari(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((ab - ari(&a, &b_relabeled).unwrap()).abs() < 1e-12);
        prop_assert!((ari(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mcr_bounds(a in prop::collection::vec(1usize..5, 2..60), seed in any::<u64>()) {
        let mut r = rng(seed);
        let b: Vec<usize> = a.iter().map(|_| r.random_range(1..5)).collect();
        let groups = a.iter().chain(&b).max().copied().unwrap() as f64;
        let v = mcr(&a, &b).unwrap();
        prop_assert!((0.0..=1.0 - 1.0 / groups + 1e-12).contains(&v));
        let perm = [0usize, 2, 4, 1, 3];
        let relabeled: Vec<usize> = a.iter().map(|&l| perm[l]).collect();
        prop_assert_eq!(mcr(&a, &relabeled).unwrap(), 0.0);
    }

    #[test]
    fn hard_responsibilities_round_trip(assignment in prop::collection::vec(0usize..3, 1..30)) {
        let z = Responsibilities::from_hard(&assignment, 3).unwrap();
        let labels: Vec<usize> = classify(&z).iter().map(|l| l - 1).collect();
        prop_assert_eq!(labels, assignment);
    }

    #[test]
    fn initial_params_are_valid(seed in any::<u64>(), variant in variant_strategy()) {
        let theta = mixture_for(seed, 2, Variant::Mvst);
        let (data, labels) = generate_mixture_sample(&theta, 60, seed).unwrap();
        let hard: Vec<usize> = labels.iter().map(|l| l - 1).collect();
        prop_assume!(hard.iter().filter(|&&l| l == 0).count() >= 2 && hard.iter().filter(|&&l| l == 1).count() >= 2);
        let z = Responsibilities::from_hard(&hard, 2).unwrap();
        let init = initial_params(&data, &z, &InitSpec { seed, ..InitSpec::default() }, variant).unwrap();
        prop_assert!((init.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(init.weights().iter().all(|&w| w >= 0.0));
        for c in init.components() {
            prop_assert!(spd_factorize(c.sigma()).is_ok() && spd_factorize(c.psi()).is_ok());
            prop_assert!(c.lambda().iter().all(|&v| (-1.0..1.0).contains(&v)));
            prop_assert_eq!(c.variant(), variant);
        }
    }

    #[test]
    fn dataset_csv_round_trip(seed in any::<u64>(), n in 1usize..4, p in 1usize..4, count in 1usize..12) {
        let mut r = rng(seed);
        let samples: Vec<Matrix> = (0..count).map(|_| random_matrix(n, p, 1e3, &mut r)).collect();
        let data = Dataset::new(samples).unwrap();
        let mut buf = Vec::new();
        write_dataset_to(&data, &mut buf).unwrap();
        let back = parse_dataset(buf.as_slice()).unwrap();
        prop_assert_eq!(back.samples(), data.samples());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn fit_json_round_trip_is_byte_identical(seed in any::<u64>(), variant in variant_strategy()) {
        let theta = mixture_for(seed, 2, Variant::Mvst);
        let (data, _) = generate_mixture_sample(&theta, 80, seed).unwrap();
        let config = FitConfig { seed, max_iter: 5, variant, ..FitConfig::default() };
        if let Ok(fit) = mvst_core::fit_mixture(&data, 2, &config) {
            let text = fit_result_to_json(&fit).unwrap();
            let again = fit_result_to_json(&fit_result_from_json(&text).unwrap()).unwrap();
            prop_assert_eq!(text, again);
        }
    }

    #[test]
    fn loglik_trace_is_nondecreasing(seed in any::<u64>(), variant in variant_strategy()) {
        let theta = mixture_for(seed, 2, Variant::Mvst);
        let (data, _) = generate_mixture_sample(&theta, 80, seed).unwrap();
        let config = FitConfig { seed, max_iter: 30, variant, ..FitConfig::default() };
        if let Ok(fit) = mvst_core::fit_mixture(&data, 2, &config) {
            prop_assert!(fit.trace.max_decrease() <= 1e-8);
            prop_assert!((fit.params.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
