use koopman_sysid::basis::{self, Dictionary, Domain, MonomialSpec};
use koopman_sysid::bounds::{self, BoundTerms};
use koopman_sysid::dynamics::{self, example1_true_koopman, Example1Params, NoiseModel, SampleSource};
use koopman_sysid::estimator::{self, MomentPair};
use koopman_sysid::experiments::{self, ExperimentConfig};
use koopman_sysid::{pf, seed};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn sweep_config(seed: u64, workers: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml_str(&format!(
        r#"
label = "prop"
base_seed = {seed}
t_grid = [50, 200]
n_realizations = 6
[system]
kind = "example1"
rho = 0.5
mu = 0.4
c = 0.7
[dictionary]
kind = "example1"
"#
    ))
    .unwrap();
    cfg.workers = workers;
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn noiseless_recovery_for_any_parameters(
        rho in -0.95f64..0.95,
        mu in -0.95f64..0.95,
        c in 0.05f64..3.0,
        s in 0u64..1000,
    ) {
        let p = Example1Params { rho, mu, c };
        let dict = Dictionary::example1();
        let sys = dynamics::make_example1_with_noise(p, NoiseModel::none(2)).unwrap();
        let samples = dynamics::generate(&sys, &Domain::symmetric_unit(2), 200, s, SampleSource::IndependentPairs).unwrap();
        let m = estimator::accumulate(MomentPair::new(&dict), &dict, &samples).unwrap();
        let k = estimator::estimate_koopman(&m).unwrap();
        prop_assert!((&k.matrix - example1_true_koopman(p, 0.0)).norm() <= 1e-8);
    }

    #[test]
    fn normal_equations_for_any_data(s in 0u64..10_000, t in 40usize..400) {
        let dict = Dictionary::monomial(&MonomialSpec::new(2, 2).unwrap()).unwrap();
        let sys = dynamics::make_example1(Example1Params { rho: 0.5, mu: 0.2, c: 1.0 }).unwrap();
        let m = estimator::accumulate_generated(&sys, &dict, &Domain::symmetric_unit(2), t, s, SampleSource::IndependentPairs).unwrap();
        let k = estimator::estimate_koopman(&m).unwrap();
        prop_assume!(!k.fallback);
        let s1 = m.sigma1_hat();
        let defect = (m.sigma0_hat() * &k.matrix - &s1).norm();
        prop_assert!(defect <= 1e-9 * s1.norm().max(1.0), "{}", defect);
    }

    #[test]
    fn duality_for_random_operators_and_domains(
        entries in proptest::collection::vec(-2.0f64..2.0, 36),
        lo in -2.0f64..-0.1,
        hi in 0.1f64..2.0,
        s in 0u64..1000,
    ) {
        let dict = Dictionary::monomial(&MonomialSpec::new(2, 2).unwrap()).unwrap();
        let domain = Domain::new(vec![lo, lo], vec![hi, hi]).unwrap();
        let gram = basis::gram(&dict, &domain, 8).unwrap();
        let k = DMatrix::from_vec(6, 6, entries);
        let (p, _) = pf::conjugate_transpose(&k, &gram).unwrap();
        let scale = k.norm().max(1.0) * gram.condition();
        prop_assert!(pf::duality_check(&k, &p, &gram, 50, s).unwrap() <= 1e-12 * scale);
    }

    #[test]
    fn bound_scales_as_inverse_epsilon_and_root_t(
        delta in 0.0f64..10.0,
        eps in 0.01f64..0.99,
        t in 20usize..1_000_000,
        trace in 0.1f64..100.0,
        frob in 0.1f64..100.0,
    ) {
        let terms = BoundTerms {
            mean_trace_sigma0: trace,
            mean_frob_sq_inv_sigma0: frob,
            se_trace_sigma0: 0.0,
            se_frob_sq_inv_sigma0: 0.0,
            n_used: 1,
            n_singular: 0,
        };
        let b = bounds::theorem1_bound(delta, eps, t, 4, &terms).unwrap();
        let b_half = bounds::theorem1_bound(delta, eps / 2.0, t, 4, &terms).unwrap();
        let b_4t = bounds::theorem1_bound(delta, eps, 4 * t, 4, &terms).unwrap();
        prop_assert!((b_half - 2.0 * b).abs() <= 1e-12 * b.max(1e-300));
        prop_assert!((2.0 * b_4t - b).abs() <= 1e-12 * b.max(1e-300));
        prop_assert!(b >= 0.0);
    }

    #[test]
    fn derived_seeds_distinct_across_realizations(base in any::<u64>(), t in 1u64..1_000_000) {
        let seeds: std::collections::HashSet<u64> = (0..2000).map(|r| seed::derive_seed(base, t, r)).collect();
        prop_assert_eq!(seeds.len(), 2000);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn sweep_ignores_worker_count(s in any::<u64>(), workers in 2usize..6) {
        let a = experiments::run_sweep(&sweep_config(s, 1)).unwrap();
        let b = experiments::run_sweep(&sweep_config(s, workers)).unwrap();
        prop_assert_eq!(&a.curve, &b.curve);
        prop_assert_eq!(a.realizations, b.realizations);
    }
}

#[test]
fn noiseless_sweep_is_exact_and_skips_slope() {
    let cfg = ExperimentConfig::load(
        &std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/noiseless.toml"),
    )
    .unwrap();
    let c = experiments::run_sweep(&cfg).unwrap().curve;
    assert!(c.mean_rel_err.iter().all(|&e| e <= 1e-8));
    assert!(c.fitted_slope.is_none());
    let rows = experiments::run_bound_calibration(&cfg).unwrap();
    assert!(rows.iter().all(|r| r.report.koopman_bound == 0.0 && r.stats.violation_rate == 0.0));
}

#[test]
fn bound_is_linear_in_inverse_epsilon_across_rows() {
    let mut cfg = sweep_config(3, 1);
    cfg.t_grid = vec![500];
    cfg.epsilon_list = vec![0.1, 0.5];
    cfg.bound_term_realizations = 20;
    let rows = experiments::run_bound_calibration(&cfg).unwrap();
    let (b1, b5) = (rows[0].report.koopman_bound, rows[1].report.koopman_bound);
    assert!((b1 - 5.0 * b5).abs() <= 1e-12 * b1);
}

#[test]
fn collapsing_trajectories_are_flagged_invalid() {
    // with rho = mu = 0 and no noise every state after the first is the origin
    let cfg = ExperimentConfig::from_toml_str(
        r#"
label = "collapse"
base_seed = 1
t_grid = [100]
n_realizations = 5
[system]
kind = "example1"
rho = 0.0
mu = 0.0
c = 1.0
noise_std = [0.0, 0.0]
[dictionary]
kind = "example1"
"#,
    )
    .unwrap();
    let out = experiments::run_sweep(&cfg).unwrap();
    assert!(out.curve.any_invalid());
    assert!(out.realizations.iter().all(|r| r.rel_err.is_none()));
}
