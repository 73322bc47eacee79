use rdkink::{
    generate, run_monte_carlo, run_monte_carlo_detailed, run_design, DesignSpec, DgpSpec, InferenceConfig,
    RdError,
};

#[test]
fn generation_is_seed_deterministic() {
    let a = generate(&DgpSpec::standard_fuzzy(500, 9)).unwrap();
    let b = generate(&DgpSpec::standard_fuzzy(500, 9)).unwrap();
    let c = generate(&DgpSpec::standard_fuzzy(500, 10)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn replications_reuse_consecutive_seeds() {
    let dgp = DgpSpec::standard_sharp(600, 40);
    let design = DesignSpec::sharp(1);
    let cfg = InferenceConfig::default();
    let (report, results) = run_monte_carlo_detailed(&dgp, &design, &cfg, 6).unwrap();
    assert_eq!(report.replications, 6);
    for (i, r) in results.iter().enumerate() {
        let d = generate(&dgp.clone().with_seed(40 + i as u64)).unwrap();
        assert_eq!(r.as_ref(), Some(&run_design(&d, &design, &cfg).unwrap()));
    }
    let again = run_monte_carlo(&dgp, &design, &cfg, 6).unwrap();
    assert_eq!(report, again);
}

#[test]
fn truth_follows_the_design() {
    let fuzzy = DgpSpec::standard_fuzzy(1000, 1);
    assert_eq!(fuzzy.truth(&DesignSpec::fuzzy(1)).unwrap(), 1.5);
    assert_eq!(fuzzy.truth(&DesignSpec::sharp(1)).unwrap(), 0.75);
    assert!(fuzzy.truth(&DesignSpec::fuzzy(2).kink()).is_err());
    let kink = DgpSpec {
        kink: -0.4,
        ..DgpSpec::standard_sharp(1000, 1)
    };
    assert_eq!(kink.truth(&DesignSpec::sharp(1).kink()).unwrap(), -0.4);
}

#[test]
fn sharp_kink_design_recovers_slope_change() {
    let dgp = DgpSpec {
        kink: 1.0,
        jump: 0.0,
        noise_sd: 0.3,
        ..DgpSpec::standard_sharp(4000, 1)
    };
    let rep = run_monte_carlo(&dgp, &DesignSpec::sharp(2).kink(), &InferenceConfig::default(), 100).unwrap();
    assert_eq!(rep.failures, 0);
    assert!(rep.bias.abs() < 0.25 * rep.rmse.max(0.05), "{rep:?}");
    assert!(rep.coverage > 0.85, "{rep:?}");
}

#[test]
fn paper_mirror_preset_runs() {
    let d = generate(&DgpSpec::paper_mirror(4000, 3)).unwrap();
    assert!(d.observations.iter().all(|o| o.y == 0.0 || o.y == 1.0));
    let r = run_design(&d, &DesignSpec::fuzzy(1), &InferenceConfig::default()).unwrap();
    let fs = r.first_stage_jump.unwrap();
    assert!((fs - 0.14).abs() < 0.1, "{fs}");
}

#[test]
fn too_many_failures_is_an_error() {
    // No compliance jump: every fuzzy replication fails on the first stage.
    let dgp = DgpSpec {
        compliance_left: 0.5,
        compliance_right: 0.5,
        treatment_effect: 0.0,
        jump: 1.0,
        ..DgpSpec::standard_sharp(300, 1)
    };
    let e = run_monte_carlo(&dgp, &DesignSpec::sharp(1), &InferenceConfig::default(), 0).unwrap_err();
    assert!(matches!(e, RdError::Validation(_)));
    let mut always_weak = dgp.clone();
    always_weak.compliance_left = 0.0;
    always_weak.compliance_right = 0.0;
    // Truth is undefined without a first stage, which is a validation error up front.
    assert!(run_monte_carlo(&always_weak, &DesignSpec::fuzzy(1), &InferenceConfig::default(), 5).is_err());
    let tiny = InferenceConfig {
        first_stage_floor: 10.0,
        ..InferenceConfig::default()
    };
    let e = run_monte_carlo(&DgpSpec::standard_fuzzy(400, 1), &DesignSpec::fuzzy(1), &tiny, 5).unwrap_err();
    assert!(matches!(e, RdError::TooManyFailures { failed: 5, reps: 5 }), "{e}");
}
