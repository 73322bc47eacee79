use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use super::*;
use crate::estimators::{point_estimate, sharp_estimate};
use crate::localpoly::fit_side;
use crate::model::{KernelKind, Observation};
use crate::synthetic::{generate, DgpSpec};

fn grid(n: i32, f: impl Fn(f64) -> f64) -> Dataset {
    Dataset::from_observations(
        (-n..=n)
            .map(|i| {
                let z = i as f64 / n as f64;
                Observation::new(z, f(z), if z >= 0.0 { 1.0 } else { 0.0 })
            })
            .collect(),
    )
}

fn cfg() -> InferenceConfig {
    InferenceConfig::default()
}

fn stage_of(e: &RdError) -> Option<Stage> {
    match e {
        RdError::Stage { stage, .. } => Some(*stage),
        _ => None,
    }
}

#[test]
fn linear_data_has_no_bias() {
    let d = grid(500, |z| 0.3 + 1.7 * z + if z >= 0.0 { 0.4 } else { 0.0 });
    let b = estimate_bias(&d, &DesignSpec::sharp(1), 0.5, 0.5, &cfg()).unwrap();
    assert!(b.abs() < 1e-8, "{b}");
}

#[test]
fn quadratic_data_has_no_bias_at_p2() {
    let d = grid(500, |z| 0.3 - 0.9 * z + 2.5 * z * z);
    let b = estimate_bias(&d, &DesignSpec::sharp(2), 0.5, 0.5, &cfg()).unwrap();
    assert!(b.abs() < 1e-8, "{b}");
}

/// Continuous-limit oracle for the one-sided triangular local fit on [0, 1]:
/// `coefficients(order, j)` are the population coefficients when regressing
/// `u^j` on `1, u, .., u^order` with kernel weight `1 - u`.
fn moment_fit(order: usize, j: usize) -> DVector<f64> {
    let mu = |k: usize| 1.0 / ((k + 1) as f64 * (k + 2) as f64);
    let m = DMatrix::from_fn(order + 1, order + 1, |r, c| mu(r + c));
    let rhs = DVector::from_fn(order + 1, |r, _| mu(r + j));
    m.lu().solve(&rhs).unwrap()
}

#[test]
fn cubic_bias_leading_term_vs_moment_oracle() {
    // For y = z^3 the order-1 estimate misses the level by 2 * a h^3 with
    // a = intercept of u^3 on (1, u); the leading-term estimate is
    // 2 * s_2 * beta_2 with s_2 the intercept of u^2 and beta_2 the
    // quadratic coefficient of u^3 on (1, u, u^2).
    let h = 0.5;
    let d = grid(25_000, |z| z * z * z);
    let spec = DesignSpec::sharp(1);
    let (tau, _) = sharp_estimate(&d, &spec, h, h, &FitOptions::default()).unwrap();
    let b = estimate_bias(&d, &spec, h, h, &cfg()).unwrap();

    let a = moment_fit(1, 3)[0];
    let s2 = moment_fit(1, 2)[0];
    let beta2 = moment_fit(2, 3)[2];
    assert!((a + 0.1).abs() < 1e-12 && (s2 + 0.1).abs() < 1e-12);
    let oracle_tau = 2.0 * a * h.powi(3);
    let oracle_b = 2.0 * s2 * beta2 * h.powi(3);
    assert!((tau - oracle_tau).abs() < 1e-3 * oracle_tau.abs(), "{tau} vs {oracle_tau}");
    assert!((b - oracle_b).abs() < 1e-3 * oracle_b.abs(), "{b} vs {oracle_b}");
    // The leading term overshoots the true finite-sample bias by 9/7.
    assert!(((b / tau) - 9.0 / 7.0).abs() < 2e-3, "{}", b / tau);
}

#[test]
fn cubic_bias_exact_with_two_extra_orders() {
    let h = 0.5;
    let d = grid(25_000, |z| z * z * z);
    let spec = DesignSpec::sharp(1);
    let (tau, _) = sharp_estimate(&d, &spec, h, h, &FitOptions::default()).unwrap();
    let c = InferenceConfig {
        bias_order_increment: 2,
        ..cfg()
    };
    let b = estimate_bias(&d, &spec, h, h, &c).unwrap();
    assert!((b - tau).abs() < 1e-10 * tau.abs(), "{b} vs {tau}");
}

#[test]
fn bias_corrected_with_same_bandwidth_equals_higher_order_fit() {
    let dgp = DgpSpec::standard_sharp(3000, 11);
    let d = generate(&dgp).unwrap();
    let (tau1, _) = sharp_estimate(&d, &DesignSpec::sharp(1), 0.4, 0.6, &FitOptions::default()).unwrap();
    let (tau2, _) = sharp_estimate(&d, &DesignSpec::sharp(2), 0.4, 0.6, &FitOptions::default()).unwrap();
    let b = estimate_bias(&d, &DesignSpec::sharp(1), 0.4, 0.6, &cfg()).unwrap();
    assert!((tau1 - b - tau2).abs() < 1e-10);
}

#[test]
fn noise_free_variances_vanish() {
    let d = grid(400, |z| if z >= 0.0 { 2.0 } else { -1.0 });
    for spec in [DesignSpec::sharp(1), DesignSpec::sharp(2)] {
        let (vc, vr) = estimate_variance(&d, &spec, 0.5, 0.5, &cfg()).unwrap();
        assert!(vc < 1e-12 && vr < 1e-12, "{vc} {vr}");
    }
    let d = grid(400, |z| 0.2 + 0.7 * z + if z >= 0.0 { 2.0 } else { 0.0 });
    let hc = InferenceConfig {
        variance_estimator: VarianceEstimator::HcPlugin,
        ..cfg()
    };
    let (vc, vr) = estimate_variance(&d, &DesignSpec::sharp(1), 0.5, 0.5, &hc).unwrap();
    assert!(vc < 1e-12 && vr < 1e-12, "{vc} {vr}");
}

#[test]
fn variance_scales_with_noise_squared() {
    let reps = 500;
    let spec = DesignSpec::sharp(1);
    let run = |sd: f64| -> (f64, f64) {
        let mut mean_v = 0.0;
        let mut taus = Vec::with_capacity(reps);
        for i in 0..reps {
            let dgp = DgpSpec {
                noise_sd: sd,
                ..DgpSpec::standard_sharp(1000, 5000 + i as u64)
            };
            let d = generate(&dgp).unwrap();
            let (tau, _) = sharp_estimate(&d, &spec, 0.5, 0.5, &FitOptions::default()).unwrap();
            let (vc, _) = estimate_variance(&d, &spec, 0.5, 0.5, &cfg()).unwrap();
            mean_v += vc / reps as f64;
            taus.push(tau);
        }
        let m = taus.iter().sum::<f64>() / reps as f64;
        let emp = taus.iter().map(|t| (t - m).powi(2)).sum::<f64>() / (reps - 1) as f64;
        (mean_v, emp)
    };
    let (v1, e1) = run(1.0);
    let (v2, e2) = run(2.0);
    assert!((v2 / v1 - 4.0).abs() < 0.2, "estimated ratio {}", v2 / v1);
    assert!((e2 / e1 - 4.0).abs() < 0.8, "empirical ratio {}", e2 / e1);
    // The variance estimate tracks the sampling variance.
    assert!((v1 / e1 - 1.0).abs() < 0.2, "{v1} vs {e1}");
}

#[test]
fn robust_variance_dominates_on_standard_dgp() {
    for i in 0..100 {
        let d = generate(&DgpSpec::standard_sharp(2000, 900 + i)).unwrap();
        let r = run_design(&d, &DesignSpec::sharp(1), &cfg()).unwrap();
        assert!(r.se_robust >= r.se_conventional, "rep {i}: {r:?}");
    }
}

#[test]
fn sharp_auto_bandwidth_covers_truth() {
    let d = generate(&DgpSpec::standard_sharp(5000, 3)).unwrap();
    let r = run_design(&d, &DesignSpec::sharp(1), &cfg()).unwrap();
    assert!((r.tau - 1.0).abs() < 3.0 * r.se_robust, "{r:?}");
    assert!(r.ci_low <= 1.0 && 1.0 <= r.ci_high, "{r:?}");
    assert!(r.h_left > 0.0 && r.h_left == r.h_right);
    assert!(r.n_left > 0 && r.n_right > 0);
    assert!(r.first_stage_jump.is_none());
}

#[test]
fn fuzzy_late_within_three_se() {
    let d = generate(&DgpSpec::standard_fuzzy(20_000, 17)).unwrap();
    let r = run_design(&d, &DesignSpec::fuzzy(1), &cfg()).unwrap();
    assert!((r.tau - 1.5).abs() < 3.0 * r.se_robust, "{r:?}");
    let fs = r.first_stage_jump.unwrap();
    assert!((fs - 0.5).abs() < 0.1, "{fs}");
}

#[test]
fn fixed_bandwidth_run_matches_stages() {
    let d = generate(&DgpSpec::standard_fuzzy(4000, 23)).unwrap();
    let spec = DesignSpec::fuzzy(1).with_bandwidths(0.35, 0.55);
    let c = cfg();
    let r = run_design(&d, &spec, &c).unwrap();
    let (tau, comps) = point_estimate(&d, &spec, 0.35, 0.55, &c.fit_options()).unwrap();
    let b = estimate_bias(&d, &spec, 0.35, 0.55, &c).unwrap();
    let (vc, vr) = estimate_variance(&d, &spec, 0.35, 0.55, &c).unwrap();
    let ci = rbc_interval(tau, b, vr, spec.alpha).unwrap();
    assert_eq!(r.tau, tau);
    assert_eq!(r.bias, b);
    assert_eq!(r.se_conventional, vc.sqrt());
    assert_eq!(r.se_robust, vr.sqrt());
    assert_eq!((r.ci_low, r.ci_high, r.p_value), (ci.low, ci.high, ci.p_value));
    assert_eq!(r.first_stage_jump, comps.treatment_jump());
    assert_eq!((r.h_left, r.h_right), (0.35, 0.55));
}

#[test]
fn errors_name_their_stage() {
    let d = generate(&DgpSpec::standard_sharp(1000, 1)).unwrap();

    let bad_spec = DesignSpec::sharp(1).with_alpha(1.5);
    let e = run_design(&d, &bad_spec, &cfg()).unwrap_err();
    assert_eq!(stage_of(&e), Some(Stage::Validation));

    // No compliance jump: every row has x = 0 on both sides.
    let e = run_design(&d, &DesignSpec::fuzzy(1).with_bandwidths(0.5, 0.5), &cfg()).unwrap_err();
    assert_eq!(stage_of(&e), Some(Stage::Estimation));
    assert!(matches!(e.root(), RdError::WeakFirstStage { .. }));
    assert!(e.to_string().contains("point estimation"), "{e}");

    let e = run_design(&d, &DesignSpec::sharp(1).with_bandwidths(1e-4, 0.5), &cfg()).unwrap_err();
    assert_eq!(stage_of(&e), Some(Stage::Estimation));
    assert!(matches!(e.root(), RdError::SampleSize { .. }), "{e}");

    let big_k = InferenceConfig {
        variance_estimator: VarianceEstimator::NearestNeighbor { k: 5000 },
        ..cfg()
    };
    let e = run_design(&d, &DesignSpec::sharp(1).with_bandwidths(0.5, 0.5), &big_k).unwrap_err();
    assert_eq!(stage_of(&e), Some(Stage::Variance));
    assert!(matches!(e.root(), RdError::Parameter(_)), "{e}");

    let one_sided = Dataset::from_observations(
        d.observations.iter().filter(|o| o.z < 0.0).cloned().collect(),
    );
    let e = run_design(&one_sided, &DesignSpec::sharp(1), &cfg()).unwrap_err();
    assert_eq!(stage_of(&e), Some(Stage::Validation));
}

#[test]
fn auto_per_side_bandwidths_differ_with_asymmetric_curvature() {
    let dgp = DgpSpec {
        baseline: vec![0.0, 0.0, 0.0, 3.0],
        ..DgpSpec::standard_sharp(6000, 8)
    };
    let d = generate(&dgp).unwrap();
    let spec = DesignSpec::sharp(1).with_bandwidth_rule(BandwidthRule::AutoPerSide);
    let r = run_design(&d, &spec, &cfg()).unwrap();
    assert!(r.h_left > 0.0 && r.h_right > 0.0);
    assert!(r.h_left != r.h_right);
}

#[test]
fn covariates_flow_through_run_design() {
    let dgp = DgpSpec::standard_sharp(3000, 4);
    let mut d = generate(&dgp).unwrap();
    for (i, o) in d.observations.iter_mut().enumerate() {
        let c = ((i * 7919) % 101) as f64 / 50.0 - 1.0;
        o.covariates = vec![c];
        o.y += 1.5 * c;
    }
    d.covariate_names = vec!["c".into()];
    let spec = DesignSpec::sharp(1).with_covariates(true);
    let with = run_design(&d, &spec, &cfg()).unwrap();
    let without = run_design(&d, &DesignSpec::sharp(1), &cfg()).unwrap();
    assert_eq!(with.h_left, without.h_left);
    assert!(with.se_conventional < without.se_conventional);
    assert!((with.tau - 1.0).abs() < 3.0 * with.se_robust);
}

#[test]
fn cutoff_row_is_used_on_the_right() {
    let d = grid(200, |z| if z >= 0.0 { 1.0 } else { 0.0 });
    let r = run_design(&d, &DesignSpec::sharp(1).with_bandwidths(0.1, 0.1), &cfg()).unwrap();
    // Strict window |z| < 0.1 on a 1/200 grid: 19 rows left, 20 right (z = 0 included).
    assert_eq!((r.n_left, r.n_right), (19, 20));
}

fn random_dataset(seed: u64, n: usize) -> Dataset {
    generate(&DgpSpec::standard_fuzzy(n, seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn affine_outcome_transform(seed in 0u64..1000, a in -3.0f64..3.0, c in -5.0f64..5.0) {
        prop_assume!(a.abs() > 0.1);
        let d = random_dataset(seed, 1500);
        let t = d.map_outcome(|o| a * o.y + c);
        let spec = DesignSpec::sharp(1).with_bandwidths(0.5, 0.5);
        let r0 = run_design(&d, &spec, &cfg()).unwrap();
        let r1 = run_design(&t, &spec, &cfg()).unwrap();
        prop_assert!((r1.tau - a * r0.tau).abs() < 1e-9);
        prop_assert!((r1.bias - a * r0.bias).abs() < 1e-9);
        prop_assert!((r1.se_robust - a.abs() * r0.se_robust).abs() < 1e-9);
        prop_assert!((r1.p_value - r0.p_value).abs() < 1e-9);
    }

    #[test]
    fn translating_running_variable_and_cutoff(seed in 0u64..1000, shift in -50.0f64..50.0) {
        let d = random_dataset(seed, 1200);
        let mut t = d.clone().with_cutoff(shift);
        for o in &mut t.observations {
            o.z += shift;
        }
        let spec = DesignSpec::fuzzy(1).with_bandwidths(0.6, 0.6);
        let r0 = run_design(&d, &spec, &cfg()).unwrap();
        let r1 = run_design(&t, &spec, &cfg()).unwrap();
        prop_assert!((r1.tau - r0.tau).abs() < 1e-7 * (1.0 + r0.tau.abs()));
        prop_assert!((r1.se_robust - r0.se_robust).abs() < 1e-7 * r0.se_robust);
    }

    #[test]
    fn mirroring_flips_the_sign(seed in 0u64..1000) {
        // z -> -z swaps sides; without rows at the cutoff the jump changes sign.
        let d = random_dataset(seed, 1000);
        let mut m = d.clone();
        for o in &mut m.observations {
            o.z = -o.z;
        }
        prop_assume!(d.observations.iter().all(|o| o.z != 0.0));
        let spec = DesignSpec::sharp(2).with_bandwidths(0.7, 0.7);
        let r0 = run_design(&d, &spec, &cfg()).unwrap();
        let r1 = run_design(&m, &spec, &cfg()).unwrap();
        prop_assert!((r1.tau + r0.tau).abs() < 1e-9);
        prop_assert!((r1.se_robust - r0.se_robust).abs() < 1e-9);
    }

    #[test]
    fn uniform_weight_rescaling_is_invariant(seed in 0u64..1000, w in 0.01f64..100.0) {
        let d = random_dataset(seed, 800);
        let mut t = d.clone();
        for o in &mut t.observations {
            o.weight = w;
        }
        let spec = DesignSpec::sharp(1).with_bandwidths(0.5, 0.5);
        let sw = InferenceConfig { use_survey_weights: true, ..cfg() };
        let r0 = run_design(&d, &spec, &cfg()).unwrap();
        let r1 = run_design(&t, &spec, &sw).unwrap();
        prop_assert!((r1.tau - r0.tau).abs() < 1e-9);
        prop_assert!((r1.se_robust - r0.se_robust).abs() < 1e-9);
    }

    #[test]
    fn fit_matches_normal_equations(
        seed in 0u64..1000,
        p in 1usize..=2,
        h in 0.2f64..1.5,
        uniform in proptest::bool::ANY,
        weighted in proptest::bool::ANY,
    ) {
        let mut d = random_dataset(seed, 600);
        for (i, o) in d.observations.iter_mut().enumerate() {
            o.weight = 0.5 + (i % 7) as f64 / 3.0;
        }
        let kernel = if uniform { KernelKind::Uniform } else { KernelKind::Triangular };
        let spec = DesignSpec::sharp(p).with_kernel(kernel);
        for side in [Side::Left, Side::Right] {
            let fit = fit_side(&d, &spec, Variable::Outcome, side, h, weighted).unwrap();
            let rows: Vec<&Observation> = d
                .observations
                .iter()
                .filter(|o| d.side_of(o.z) == side && o.z.abs() < h)
                .collect();
            let x = DMatrix::from_fn(rows.len(), p + 1, |i, j| rows[i].z.powi(j as i32));
            let w = DVector::from_fn(rows.len(), |i, _| {
                let k = kernel.at(rows[i].z / h);
                if weighted { k * rows[i].weight } else { k }
            });
            let y = DVector::from_fn(rows.len(), |i, _| rows[i].y);
            let xtw = x.transpose() * DMatrix::from_diagonal(&w);
            let beta = (&xtw * &x).lu().solve(&(&xtw * y)).unwrap();
            prop_assert_eq!(fit.n_effective, rows.iter().filter(|o| kernel.at(o.z / h) > 0.0).count());
            for j in 0..=p {
                prop_assert!(
                    (fit.coefficients[j] - beta[j]).abs() < 1e-8 * (1.0 + beta[j].abs()),
                    "coef {} {} vs {}", j, fit.coefficients[j], beta[j]
                );
            }
        }
    }
}
