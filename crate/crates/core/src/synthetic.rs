//! Data-generating processes with known effects, and a Monte Carlo harness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{RdError, Result};
use crate::inference::{run_design, InferenceConfig};
use crate::model::{Dataset, DesignKind, DesignSpec, EstimateResult, Observation};

/// `y = baseline(z) + jump 1[z>=0] + kink z 1[z>=0] + treatment_effect x + noise`,
/// with `x ~ Bernoulli(compliance_left | compliance_right)` and `z` uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    /// Polynomial coefficients in increasing powers of `z`.
    pub baseline: Vec<f64>,
    pub jump: f64,
    pub kink: f64,
    pub compliance_left: f64,
    pub compliance_right: f64,
    pub treatment_effect: f64,
    pub noise_sd: f64,
    pub z_range: (f64, f64),
    pub n: usize,
    pub seed: u64,
    /// Draw `y ~ Bernoulli(mean)` instead of adding Gaussian noise.
    #[serde(default)]
    pub binary_outcome: bool,
}

impl DgpSpec {
    /// Quadratic baseline, unit jump, unit noise, z uniform on [-1, 1].
    pub fn standard_sharp(n: usize, seed: u64) -> Self {
        Self {
            baseline: vec![0.5, 0.8, -0.6],
            jump: 1.0,
            kink: 0.0,
            compliance_left: 0.0,
            compliance_right: 0.0,
            treatment_effect: 0.0,
            noise_sd: 1.0,
            z_range: (-1.0, 1.0),
            n,
            seed,
            binary_outcome: false,
        }
    }

    /// Same baseline, no direct jump, compliance 0.25 -> 0.75, effect 1.5.
    pub fn standard_fuzzy(n: usize, seed: u64) -> Self {
        Self {
            jump: 0.0,
            compliance_left: 0.25,
            compliance_right: 0.75,
            treatment_effect: 1.5,
            ..Self::standard_sharp(n, seed)
        }
    }

    /// Binary outcome with a 0.14 first-stage jump and effect 0.5 on a
    /// +-20 year running variable. Qualitative only.
    pub fn paper_mirror(n: usize, seed: u64) -> Self {
        Self {
            baseline: vec![0.55, 0.004],
            jump: 0.0,
            kink: 0.0,
            compliance_left: 0.2,
            compliance_right: 0.34,
            treatment_effect: 0.5,
            noise_sd: 0.0,
            z_range: (-20.0, 20.0),
            n,
            seed,
            binary_outcome: true,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.z_range;
        if !(lo < 0.0 && 0.0 < hi) {
            return Err(RdError::Validation(format!(
                "z_range must straddle the cutoff 0, got ({lo}, {hi})"
            )));
        }
        if self.n < 50 {
            return Err(RdError::Validation(format!("n must be at least 50, got {}", self.n)));
        }
        for (name, c) in [
            ("compliance_left", self.compliance_left),
            ("compliance_right", self.compliance_right),
        ] {
            if !(0.0..=1.0).contains(&c) {
                return Err(RdError::Validation(format!("{name} must lie in [0,1], got {c}")));
            }
        }
        if !(self.noise_sd >= 0.0) {
            return Err(RdError::Validation("noise_sd must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn mean(&self, z: f64, x: f64) -> f64 {
        let base = self.baseline.iter().rev().fold(0.0, |acc, c| acc * z + c);
        let right = if z >= 0.0 { 1.0 } else { 0.0 };
        base + self.jump * right + self.kink * z * right + self.treatment_effect * x
    }

    /// Population value of the estimand targeted by `design`.
    pub fn truth(&self, design: &DesignSpec) -> Result<f64> {
        let first_stage = self.compliance_right - self.compliance_left;
        match (design.kind, design.q) {
            (DesignKind::Sharp, 0) => Ok(self.jump + self.treatment_effect * first_stage),
            (DesignKind::Sharp, _) => Ok(self.kink),
            (DesignKind::Fuzzy, 0) => {
                if first_stage == 0.0 {
                    return Err(RdError::Validation(
                        "fuzzy design needs compliance_right != compliance_left".into(),
                    ));
                }
                Ok((self.jump + self.treatment_effect * first_stage) / first_stage)
            }
            (DesignKind::Fuzzy, _) => Err(RdError::Validation(
                "this process has no kink in treatment probability; fuzzy kink designs are not identified".into(),
            )),
        }
    }
}

/// Draws a dataset; deterministic in `spec.seed`.
pub fn generate(spec: &DgpSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (lo, hi) = spec.z_range;
    let observations = (0..spec.n)
        .map(|i| {
            let z: f64 = rng.random_range(lo..hi);
            let p = if z >= 0.0 {
                spec.compliance_right
            } else {
                spec.compliance_left
            };
            let x = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
            let mean = spec.mean(z, x);
            let y = if spec.binary_outcome {
                if rng.random::<f64>() < mean.clamp(0.0, 1.0) {
                    1.0
                } else {
                    0.0
                }
            } else {
                let e: f64 = StandardNormal.sample(&mut rng);
                mean + spec.noise_sd * e
            };
            Observation::new(z, y, x).with_id(i.to_string())
        })
        .collect();
    let mut d = Dataset::from_observations(observations);
    d.outcome_name = "y".into();
    d.treatment_name = "x".into();
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub replications: usize,
    pub failures: usize,
    pub truth: f64,
    pub mean_tau: f64,
    pub bias: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub mean_ci_length: f64,
}

/// Replication `i` uses seed `spec.seed + i`. Replications that fail are
/// counted; more than 10% failures is an error.
pub fn run_monte_carlo_detailed(
    spec: &DgpSpec,
    design: &DesignSpec,
    cfg: &InferenceConfig,
    reps: usize,
) -> Result<(McReport, Vec<Option<EstimateResult>>)> {
    if reps == 0 {
        return Err(RdError::Validation("reps must be at least 1".into()));
    }
    spec.validate()?;
    design.validate()?;
    cfg.validate()?;
    let truth = spec.truth(design)?;

    let outcomes: Vec<Option<EstimateResult>> = (0..reps)
        .into_par_iter()
        .map(|i| {
            let rep = spec.clone().with_seed(spec.seed.wrapping_add(i as u64));
            generate(&rep).and_then(|d| run_design(&d, design, cfg)).ok()
        })
        .collect();

    let ok: Vec<&EstimateResult> = outcomes.iter().flatten().collect();
    let failures = reps - ok.len();
    if failures * 10 > reps || ok.is_empty() {
        return Err(RdError::TooManyFailures { failed: failures, reps });
    }
    let m = ok.len() as f64;
    let mean_tau = ok.iter().map(|r| r.tau).sum::<f64>() / m;
    let bias = mean_tau - truth;
    let spread = ok.iter().map(|r| (r.tau - mean_tau).powi(2)).sum::<f64>() / m;
    let rmse = (bias * bias + spread).sqrt().max(bias.abs());
    let covered = ok
        .iter()
        .filter(|r| r.ci_low <= truth && truth <= r.ci_high)
        .count();
    let mean_ci_length = ok.iter().map(|r| r.ci_high - r.ci_low).sum::<f64>() / m;
    let report = McReport {
        replications: reps,
        failures,
        truth,
        mean_tau,
        bias,
        rmse,
        coverage: covered as f64 / m,
        mean_ci_length,
    };
    Ok((report, outcomes))
}

pub fn run_monte_carlo(
    spec: &DgpSpec,
    design: &DesignSpec,
    cfg: &InferenceConfig,
    reps: usize,
) -> Result<McReport> {
    run_monte_carlo_detailed(spec, design, cfg, reps).map(|(r, _)| r)
}
