//! Sharp and fuzzy discontinuity (q = 0) and kink (q = 1) point estimators.

use serde::{Deserialize, Serialize};

use crate::error::{RdError, Result};
use crate::linalg::WeightedQr;
use crate::localpoly::{LocalDesign, SplitSample, Variable};
use crate::model::{Dataset, DesignKind, DesignSpec, FitSide, Side};

pub const DEFAULT_FIRST_STAGE_FLOOR: f64 = 1e-6;

/// Options shared by every estimator entry point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Multiply kernel weights by survey expansion factors.
    pub survey_weights: bool,
    pub first_stage_floor: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            survey_weights: false,
            first_stage_floor: DEFAULT_FIRST_STAGE_FLOOR,
        }
    }
}

/// One-sided limits entering the discontinuity ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpComponents {
    pub y_plus: f64,
    pub y_minus: f64,
    pub x_plus: Option<f64>,
    pub x_minus: Option<f64>,
    pub derivative_order: usize,
}

impl JumpComponents {
    pub fn outcome_jump(&self) -> f64 {
        self.y_plus - self.y_minus
    }

    pub fn treatment_jump(&self) -> Option<f64> {
        Some(self.x_plus? - self.x_minus?)
    }
}

/// Order-`p` designs on both sides at the estimation bandwidths.
#[derive(Debug, Clone)]
pub(crate) struct SideDesigns {
    pub left: LocalDesign,
    pub right: LocalDesign,
}

impl SideDesigns {
    pub fn new(
        split: &SplitSample,
        spec: &DesignSpec,
        order: usize,
        h_left: f64,
        h_right: f64,
        survey_weights: bool,
    ) -> Result<Self> {
        Ok(Self {
            left: LocalDesign::new(&split.left, spec.kernel, h_left, order, survey_weights)?,
            right: LocalDesign::new(&split.right, spec.kernel, h_right, order, survey_weights)?,
        })
    }

    pub fn side(&self, side: Side) -> &LocalDesign {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    pub fn fits(&self, split: &SplitSample, var: Variable) -> (FitSide, FitSide) {
        (
            self.left.to_fit_side(split.left.response(var)),
            self.right.to_fit_side(split.right.response(var)),
        )
    }
}

pub(crate) fn components(
    spec: &DesignSpec,
    outcome: &(FitSide, FitSide),
    treatment: Option<&(FitSide, FitSide)>,
) -> JumpComponents {
    let q = spec.q;
    JumpComponents {
        y_plus: outcome.1.coefficients[q],
        y_minus: outcome.0.coefficients[q],
        x_plus: treatment.map(|t| t.1.coefficients[q]),
        x_minus: treatment.map(|t| t.0.coefficients[q]),
        derivative_order: q,
    }
}

pub(crate) fn ratio(comps: &JumpComponents, floor: f64) -> Result<f64> {
    match comps.treatment_jump() {
        None => Ok(comps.outcome_jump()),
        Some(dx) => {
            if !(dx.abs() >= floor) {
                return Err(RdError::WeakFirstStage { jump: dx, floor });
            }
            Ok(comps.outcome_jump() / dx)
        }
    }
}

fn check_bandwidths(h_left: f64, h_right: f64) -> Result<()> {
    if h_left > 0.0 && h_right > 0.0 && h_left.is_finite() && h_right.is_finite() {
        Ok(())
    } else {
        Err(RdError::Parameter(format!(
            "bandwidths must be positive and finite, got ({h_left}, {h_right})"
        )))
    }
}

/// Difference in intercepts (q = 0) or slopes (q = 1) of the outcome fits.
pub fn sharp_estimate(
    d: &Dataset,
    spec: &DesignSpec,
    h_left: f64,
    h_right: f64,
    opts: &FitOptions,
) -> Result<(f64, JumpComponents)> {
    if spec.kind != DesignKind::Sharp {
        return Err(RdError::Parameter("sharp_estimate requires a sharp design".into()));
    }
    spec.validate()?;
    check_bandwidths(h_left, h_right)?;
    let split = SplitSample::new(d);
    let designs = SideDesigns::new(&split, spec, spec.p, h_left, h_right, opts.survey_weights)?;
    let outcome = designs.fits(&split, Variable::Outcome);
    let comps = components(spec, &outcome, None);
    Ok((comps.outcome_jump(), comps))
}

/// Ratio of the outcome jump to the treatment jump, both fitted with the
/// same bandwidths.
pub fn fuzzy_estimate(
    d: &Dataset,
    spec: &DesignSpec,
    h_left: f64,
    h_right: f64,
    opts: &FitOptions,
) -> Result<(f64, JumpComponents)> {
    if spec.kind != DesignKind::Fuzzy {
        return Err(RdError::Parameter("fuzzy_estimate requires a fuzzy design".into()));
    }
    spec.validate()?;
    check_bandwidths(h_left, h_right)?;
    let split = SplitSample::new(d);
    let designs = SideDesigns::new(&split, spec, spec.p, h_left, h_right, opts.survey_weights)?;
    let outcome = designs.fits(&split, Variable::Outcome);
    let treatment = designs.fits(&split, Variable::Treatment);
    let comps = components(spec, &outcome, Some(&treatment));
    let tau = ratio(&comps, opts.first_stage_floor)?;
    Ok((tau, comps))
}

/// Dispatches on `spec.kind`.
pub fn point_estimate(
    d: &Dataset,
    spec: &DesignSpec,
    h_left: f64,
    h_right: f64,
    opts: &FitOptions,
) -> Result<(f64, JumpComponents)> {
    match spec.kind {
        DesignKind::Sharp => sharp_estimate(d, spec, h_left, h_right, opts),
        DesignKind::Fuzzy => fuzzy_estimate(d, spec, h_left, h_right, opts),
    }
}

/// Residualises the outcome (and, for fuzzy designs, the treatment) on the
/// covariates.
///
/// Within the union of both kernel windows the response is regressed on
/// separate order-`p` polynomials for each side plus the covariates, whose
/// coefficients are shared by both sides. The fitted covariate component is
/// then subtracted from every row, so one-sided fits on the returned dataset
/// reproduce the polynomial coefficients of the joint regression.
///
/// Covariates that are identically zero inside the windows are skipped.
pub fn covariate_adjust(
    d: &Dataset,
    spec: &DesignSpec,
    h_left: f64,
    h_right: f64,
    opts: &FitOptions,
) -> Result<Dataset> {
    let arity = d.covariate_names.len();
    if arity == 0 {
        return Err(RdError::Parameter(
            "covariate adjustment requested but the dataset has no covariates".into(),
        ));
    }
    check_bandwidths(h_left, h_right)?;
    let p = spec.p;

    let mut rows = Vec::new();
    let mut weights = Vec::new();
    for (i, obs) in d.observations.iter().enumerate() {
        let side = d.side_of(obs.z);
        let h = match side {
            Side::Left => h_left,
            Side::Right => h_right,
        };
        let dz = obs.z - d.cutoff;
        let k = spec.kernel.at(dz / h);
        if k > 0.0 {
            rows.push((i, side, dz / h));
            weights.push(if opts.survey_weights { k * obs.weight } else { k });
        }
    }

    let active: Vec<usize> = (0..arity)
        .filter(|&j| rows.iter().any(|&(i, _, _)| d.observations[i].covariates[j] != 0.0))
        .collect();
    if active.is_empty() {
        return Ok(d.clone());
    }

    let mut columns = Vec::new();
    let mut names = Vec::new();
    for side in [Side::Right, Side::Left] {
        for j in 0..=p {
            columns.push(
                rows.iter()
                    .map(|&(_, s, u)| if s == side { u.powi(j as i32) } else { 0.0 })
                    .collect::<Vec<_>>(),
            );
            names.push(format!("{side}:(z-c)^{j}"));
        }
    }
    for &j in &active {
        columns.push(rows.iter().map(|&(i, _, _)| d.observations[i].covariates[j]).collect());
        names.push(d.covariate_names[j].clone());
    }
    let qr = WeightedQr::new(&columns, &weights, &names)?;
    let offset = 2 * (p + 1);

    let gamma_for = |values: Vec<f64>| -> Vec<f64> { qr.solve(&values)[offset..].to_vec() };
    let gamma_y = gamma_for(rows.iter().map(|&(i, _, _)| d.observations[i].y).collect());
    let gamma_x = (spec.kind == DesignKind::Fuzzy)
        .then(|| gamma_for(rows.iter().map(|&(i, _, _)| d.observations[i].x).collect()));

    let mut out = d.clone();
    for obs in &mut out.observations {
        let fitted = |g: &[f64]| -> f64 {
            active
                .iter()
                .zip(g)
                .map(|(&j, gj)| gj * obs.covariates[j])
                .sum()
        };
        obs.y -= fitted(&gamma_y);
        if let Some(g) = &gamma_x {
            obs.x -= fitted(g);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Observation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn grid(n: i32, f: impl Fn(f64) -> f64, x: impl Fn(f64) -> f64) -> Dataset {
        Dataset::from_observations(
            (-n..=n)
                .map(|i| {
                    let z = i as f64 / n as f64;
                    Observation::new(z, f(z), x(z))
                })
                .collect(),
        )
    }

    fn step(z: f64) -> f64 {
        if z >= 0.0 {
            1.0
        } else {
            0.0
        }
    }

    fn opts() -> FitOptions {
        FitOptions::default()
    }

    #[test]
    fn sharp_step_jump() {
        let d = grid(100, step, step);
        let (tau, comps) = sharp_estimate(&d, &DesignSpec::sharp(1), 0.5, 0.5, &opts()).unwrap();
        assert!((tau - 1.0).abs() < 1e-12);
        assert!(comps.x_plus.is_none());
    }

    #[test]
    fn sharp_kink_of_abs() {
        let d = grid(100, f64::abs, step);
        let (tau, _) = sharp_estimate(&d, &DesignSpec::sharp(1).kink(), 0.5, 0.5, &opts()).unwrap();
        assert!((tau - 2.0).abs() < 1e-12);
    }

    #[test]
    fn smooth_quadratic_has_no_jump() {
        let d = grid(100, |z| z * z, step);
        let (tau, _) = sharp_estimate(&d, &DesignSpec::sharp(2), 0.6, 0.6, &opts()).unwrap();
        assert!(tau.abs() < 1e-12);
    }

    #[test]
    fn fuzzy_ratio_on_exact_steps() {
        let d = grid(100, |z| 0.5 * step(z), |z| 0.25 * step(z));
        let (tau, comps) = fuzzy_estimate(&d, &DesignSpec::fuzzy(1), 0.5, 0.5, &opts()).unwrap();
        assert!((tau - 2.0).abs() < 1e-12);
        assert!((comps.treatment_jump().unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn fuzzy_equals_sharp_under_full_compliance() {
        let d = grid(100, |z| 0.3 + z - z * z + 0.7 * step(z) + (7.0 * z).sin() * 0.1, step);
        let (sharp, _) = sharp_estimate(&d, &DesignSpec::sharp(2), 0.4, 0.7, &opts()).unwrap();
        let (fuzzy, _) = fuzzy_estimate(&d, &DesignSpec::fuzzy(2), 0.4, 0.7, &opts()).unwrap();
        assert_eq!(sharp, fuzzy);
    }

    #[test]
    fn weak_first_stage_is_rejected() {
        let d = grid(100, step, |_| 0.0);
        let err = fuzzy_estimate(&d, &DesignSpec::fuzzy(1), 0.5, 0.5, &opts()).unwrap_err();
        assert!(matches!(err, RdError::WeakFirstStage { jump, .. } if jump == 0.0));
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let d = grid(20, step, step);
        assert!(sharp_estimate(&d, &DesignSpec::fuzzy(1), 0.5, 0.5, &opts()).is_err());
        assert!(fuzzy_estimate(&d, &DesignSpec::sharp(1), 0.5, 0.5, &opts()).is_err());
    }

    #[test]
    fn treatment_relabeling_flips_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let obs: Vec<_> = (0..800)
            .map(|_| {
                let z: f64 = rng.random_range(-1.0..1.0);
                let p = if z >= 0.0 { 0.7 } else { 0.2 };
                let x = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
                let e: f64 = StandardNormal.sample(&mut rng);
                Observation::new(z, z + 1.5 * x + 0.3 * e, x)
            })
            .collect();
        let d = Dataset::from_observations(obs);
        let flipped = {
            let mut f = d.clone();
            for o in &mut f.observations {
                o.x = 1.0 - o.x;
            }
            f
        };
        let spec = DesignSpec::fuzzy(1);
        let (a, _) = fuzzy_estimate(&d, &spec, 0.6, 0.6, &opts()).unwrap();
        let (b, _) = fuzzy_estimate(&flipped, &spec, 0.6, 0.6, &opts()).unwrap();
        assert!((a + b).abs() < 1e-9 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn zero_covariates_leave_data_unchanged() {
        let mut d = grid(50, |z| z + step(z), step).with_covariate_names(vec!["c".into()]);
        for o in &mut d.observations {
            o.covariates = vec![0.0];
        }
        let spec = DesignSpec::sharp(1);
        let adjusted = covariate_adjust(&d, &spec, 0.5, 0.5, &opts()).unwrap();
        assert_eq!(adjusted, d);
    }

    #[test]
    fn constant_covariate_is_collinear() {
        let mut d = grid(50, |z| z + step(z), step).with_covariate_names(vec!["const".into()]);
        for o in &mut d.observations {
            o.covariates = vec![1.0];
        }
        let err = covariate_adjust(&d, &DesignSpec::sharp(1), 0.5, 0.5, &opts()).unwrap_err();
        assert!(matches!(err, RdError::Singular { ref column } if column == "const"));
    }

    #[test]
    fn adjustment_matches_joint_regression_jump() {
        // Noise-free outcome with an exact covariate effect: adjustment recovers the jump exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let obs: Vec<_> = (0..400)
            .map(|_| {
                let z: f64 = rng.random_range(-1.0..1.0);
                let c: f64 = rng.random_range(-1.0..1.0);
                Observation::new(z, 0.5 * z + 0.8 * step(z) + 2.0 * c, step(z)).with_covariates(vec![c])
            })
            .collect();
        let d = Dataset::from_observations(obs).with_covariate_names(vec!["c".into()]);
        let spec = DesignSpec::sharp(1).with_covariates(true);
        let adjusted = covariate_adjust(&d, &spec, 0.7, 0.7, &opts()).unwrap();
        let (tau, _) = sharp_estimate(&adjusted, &spec, 0.7, 0.7, &opts()).unwrap();
        assert!((tau - 0.8).abs() < 1e-10);
    }

    #[test]
    fn covariate_adjustment_improves_precision_in_majority() {
        let spec = DesignSpec::sharp(1).with_covariates(true);
        let reps = 500;
        let mut closer = 0;
        for rep in 0..reps {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + rep);
            let obs: Vec<_> = (0..400)
                .map(|_| {
                    let z: f64 = rng.random_range(-1.0..1.0);
                    let c: f64 = StandardNormal.sample(&mut rng);
                    let e: f64 = StandardNormal.sample(&mut rng);
                    Observation::new(z, 0.4 * z - 0.3 * z * z + step(z) + 2.0 * c + 0.5 * e, step(z))
                        .with_covariates(vec![c])
                })
                .collect();
            let d = Dataset::from_observations(obs).with_covariate_names(vec!["c".into()]);
            let (raw, _) = sharp_estimate(&d, &spec, 0.6, 0.6, &opts()).unwrap();
            let adjusted = covariate_adjust(&d, &spec, 0.6, 0.6, &opts()).unwrap();
            let (adj, _) = sharp_estimate(&adjusted, &spec, 0.6, 0.6, &opts()).unwrap();
            if (adj - 1.0).abs() < (raw - 1.0).abs() {
                closer += 1;
            }
        }
        assert!(closer * 2 >= reps, "adjusted closer in {closer}/{reps}");
    }
}
