//! Bias, variance, bandwidth selection and robust bias-corrected intervals.
//!
//! The bias of an order-`p` fit is estimated from pilot fits of order
//! `p + bias_order_increment` at the same bandwidth: each neglected power
//! `j = p+1..` contributes `s_j * beta_j`, where `s_j` is the coefficient the
//! order-`p` fit assigns to a pure `(z - c)^j` term and `beta_j` the pilot
//! coefficient. Because the correction is linear in the response, the
//! bias-corrected estimate has its own linear weights, and its variance (the
//! robust variance) is the sandwich of those weights with the same residual
//! variances used for the conventional variance.

mod bandwidth;
mod interval;
mod variance;

use serde::{Deserialize, Serialize};

pub use bandwidth::{bandwidth_formula, pilot_estimates, select_bandwidth, BandwidthSide, PilotEstimates};
pub use interval::{normal_critical_value, rbc_interval, star_label, two_sided_p_value, RbcInterval};
pub use variance::nn_residual_variance;

use crate::error::{RdError, Result, Stage};
use crate::estimators::{components, covariate_adjust, ratio, FitOptions, SideDesigns};
use crate::localpoly::{SplitSample, Variable};
use crate::model::{
    validate_dataset, BandwidthRule, Dataset, DesignKind, DesignSpec, EstimateResult, FitSide, Side,
};

use variance::sandwich;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VarianceEstimator {
    /// Residual variance from the `k` nearest same-side neighbours in `z`.
    NearestNeighbor { k: usize },
    /// Squared residuals of the fitted local polynomial.
    HcPlugin,
}

impl Default for VarianceEstimator {
    fn default() -> Self {
        VarianceEstimator::NearestNeighbor { k: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    /// Pilot regressions for the bias use order `p + bias_order_increment`.
    pub bias_order_increment: usize,
    pub variance_estimator: VarianceEstimator,
    pub use_survey_weights: bool,
    pub first_stage_floor: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            bias_order_increment: 1,
            variance_estimator: VarianceEstimator::default(),
            use_survey_weights: false,
            first_stage_floor: crate::estimators::DEFAULT_FIRST_STAGE_FLOOR,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bias_order_increment < 1 {
            return Err(RdError::Parameter("bias_order_increment must be at least 1".into()));
        }
        if let VarianceEstimator::NearestNeighbor { k } = self.variance_estimator {
            if k < 1 {
                return Err(RdError::Parameter("nearest-neighbour k must be at least 1".into()));
            }
        }
        if !(self.first_stage_floor > 0.0) {
            return Err(RdError::Parameter("first_stage_floor must be positive".into()));
        }
        Ok(())
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            survey_weights: self.use_survey_weights,
            first_stage_floor: self.first_stage_floor,
        }
    }
}

/// Residual variances for response `u` on the rows of `design`.
pub(crate) fn residual_variance(
    design: &crate::localpoly::LocalDesign,
    u: &[f64],
    estimator: VarianceEstimator,
) -> Result<Vec<f64>> {
    let u = &u[..design.m];
    match estimator {
        VarianceEstimator::NearestNeighbor { k } => {
            nn_residual_variance(&design.dz, u, k).map_err(|e| e.on_side(design.side))
        }
        VarianceEstimator::HcPlugin => {
            let c = design.coefficients(u);
            Ok(design
                .dz
                .iter()
                .zip(u)
                .map(|(d, y)| {
                    let fitted = c.iter().rev().fold(0.0, |acc, ci| acc * d + ci);
                    (y - fitted).powi(2)
                })
                .collect())
        }
    }
}

/// Linear combination `y - tau * x` (or `y` for sharp designs).
pub(crate) fn composite(y: &[f64], x: &[f64], tau: Option<f64>) -> Vec<f64> {
    match tau {
        None => y.to_vec(),
        Some(t) => y.iter().zip(x).map(|(y, x)| y - t * x).collect(),
    }
}

/// Everything computed at a fixed pair of bandwidths.
pub(crate) struct Analysis {
    pub outcome_fits: (FitSide, FitSide),
    pub treatment_fits: Option<(FitSide, FitSide)>,
    pub tau: f64,
    pub bias: f64,
    pub v_conventional: f64,
    pub v_robust: f64,
    pub first_stage_jump: Option<f64>,
    pub n_left: usize,
    pub n_right: usize,
}

struct SideBias {
    /// `s_j` for `j = p+1 ..= p+inc`.
    projections: Vec<f64>,
    conv_functional: Vec<f64>,
    bc_functional: Vec<f64>,
}

impl Analysis {
    pub fn compute(
        split: &SplitSample,
        spec: &DesignSpec,
        cfg: &InferenceConfig,
        h_left: f64,
        h_right: f64,
    ) -> Result<Self> {
        let p = spec.p;
        let q = spec.q;
        let inc = cfg.bias_order_increment;
        let fuzzy = spec.kind == DesignKind::Fuzzy;
        let sw = cfg.use_survey_weights;

        let conv = SideDesigns::new(split, spec, p, h_left, h_right, sw).map_err(|e| e.at_stage(Stage::Estimation))?;
        let outcome_fits = conv.fits(split, Variable::Outcome);
        let treatment_fits = fuzzy.then(|| conv.fits(split, Variable::Treatment));
        let comps = components(spec, &outcome_fits, treatment_fits.as_ref());
        let tau = ratio(&comps, cfg.first_stage_floor).map_err(|e| e.at_stage(Stage::Estimation))?;

        let pilot = SideDesigns::new(split, spec, p + inc, h_left, h_right, sw).map_err(|e| e.at_stage(Stage::Bias))?;
        let side_bias = |side: Side| -> SideBias {
            let c = conv.side(side);
            let b = pilot.side(side);
            let projections: Vec<f64> = (p + 1..=p + inc).map(|j| c.projection(q, j)).collect();
            let conv_functional = c.functional(q);
            let mut bc_functional = conv_functional.clone();
            for (j, s) in (p + 1..=p + inc).zip(&projections) {
                for (l, lj) in bc_functional.iter_mut().zip(b.functional(j)) {
                    *l -= s * lj;
                }
            }
            SideBias {
                projections,
                conv_functional,
                bc_functional,
            }
        };
        let left_bias = side_bias(Side::Left);
        let right_bias = side_bias(Side::Right);

        let bias_of = |var: Variable| -> f64 {
            let one = |side: Side, sb: &SideBias| -> f64 {
                let coefs = pilot.side(side).coefficients(split.side(side).response(var));
                (p + 1..=p + inc)
                    .zip(&sb.projections)
                    .map(|(j, s)| s * coefs[j])
                    .sum()
            };
            one(Side::Right, &right_bias) - one(Side::Left, &left_bias)
        };
        let bias_y = bias_of(Variable::Outcome);
        let (tau_bc, denom, denom_bc) = if fuzzy {
            let dx = comps.treatment_jump().unwrap_or(1.0);
            let dx_bc = dx - bias_of(Variable::Treatment);
            if !(dx_bc.abs() >= cfg.first_stage_floor) {
                return Err(RdError::WeakFirstStage {
                    jump: dx_bc,
                    floor: cfg.first_stage_floor,
                }
                .at_stage(Stage::Bias));
            }
            ((comps.outcome_jump() - bias_y) / dx_bc, dx, dx_bc)
        } else {
            (tau - bias_y, 1.0, 1.0)
        };
        let bias = if fuzzy { tau - tau_bc } else { bias_y };

        let mut v_conventional = 0.0;
        let mut v_robust = 0.0;
        for (side, sb) in [(Side::Left, &left_bias), (Side::Right, &right_bias)] {
            let sample = split.side(side);
            let u_conv = composite(&sample.y, &sample.x, fuzzy.then_some(tau));
            let u_bc = composite(&sample.y, &sample.x, fuzzy.then_some(tau_bc));
            let (conv_design, robust_design) = match cfg.variance_estimator {
                VarianceEstimator::NearestNeighbor { .. } => (conv.side(side), conv.side(side)),
                VarianceEstimator::HcPlugin => (conv.side(side), pilot.side(side)),
            };
            let s_conv = residual_variance(conv_design, &u_conv, cfg.variance_estimator)
                .map_err(|e| e.at_stage(Stage::Variance))?;
            let s_bc = residual_variance(robust_design, &u_bc, cfg.variance_estimator)
                .map_err(|e| e.at_stage(Stage::Variance))?;
            v_conventional += sandwich(&sb.conv_functional, &s_conv);
            v_robust += sandwich(&sb.bc_functional, &s_bc);
        }
        v_conventional /= denom * denom;
        v_robust /= denom_bc * denom_bc;

        Ok(Self {
            n_left: outcome_fits.0.n_effective,
            n_right: outcome_fits.1.n_effective,
            outcome_fits,
            treatment_fits,
            tau,
            bias,
            v_conventional,
            v_robust,
            first_stage_jump: comps.treatment_jump(),
        })
    }
}

fn check_inputs(d: &Dataset, spec: &DesignSpec, cfg: &InferenceConfig) -> Result<()> {
    spec.validate().map_err(|e| e.at_stage(Stage::Validation))?;
    cfg.validate().map_err(|e| e.at_stage(Stage::Validation))?;
    let findings = validate_dataset(d);
    if !findings.is_empty() {
        let msg = findings.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("; ");
        return Err(RdError::InvalidDataset(msg).at_stage(Stage::Validation));
    }
    Ok(())
}

/// Leading bias `b_n` of the order-`p` estimate; the corrected estimate is `tau - b_n`.
pub fn estimate_bias(
    d: &Dataset,
    spec: &DesignSpec,
    h_left: f64,
    h_right: f64,
    cfg: &InferenceConfig,
) -> Result<f64> {
    spec.validate()?;
    cfg.validate()?;
    let split = SplitSample::new(d);
    Ok(Analysis::compute(&split, spec, cfg, h_left, h_right)?.bias)
}

/// Conventional and robust (bias-corrected) variances of the estimate.
pub fn estimate_variance(
    d: &Dataset,
    spec: &DesignSpec,
    h_left: f64,
    h_right: f64,
    cfg: &InferenceConfig,
) -> Result<(f64, f64)> {
    spec.validate()?;
    cfg.validate()?;
    let split = SplitSample::new(d);
    let a = Analysis::compute(&split, spec, cfg, h_left, h_right)?;
    Ok((a.v_conventional, a.v_robust))
}

/// A finished estimate together with the one-sided fits it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRun {
    pub result: EstimateResult,
    pub outcome_fits: (FitSide, FitSide),
    pub treatment_fits: Option<(FitSide, FitSide)>,
}

/// Resolves the bandwidth rule of `spec` to `(h_left, h_right)`.
pub fn resolve_bandwidths(d: &Dataset, spec: &DesignSpec, cfg: &InferenceConfig) -> Result<(f64, f64)> {
    match spec.bandwidth {
        BandwidthRule::Fixed { h_left, h_right } => Ok((h_left, h_right)),
        BandwidthRule::Auto => {
            let h = select_bandwidth(d, spec, cfg, BandwidthSide::Pooled)?;
            Ok((h, h))
        }
        BandwidthRule::AutoPerSide => Ok((
            select_bandwidth(d, spec, cfg, BandwidthSide::Left)?,
            select_bandwidth(d, spec, cfg, BandwidthSide::Right)?,
        )),
    }
}

pub fn run_design_detailed(d: &Dataset, spec: &DesignSpec, cfg: &InferenceConfig) -> Result<DesignRun> {
    check_inputs(d, spec, cfg)?;
    let (h_left, h_right) = resolve_bandwidths(d, spec, cfg).map_err(|e| match e {
        e @ RdError::Stage { .. } => e,
        e => e.at_stage(Stage::Bandwidth),
    })?;
    let adjusted;
    let data = if spec.use_covariates {
        adjusted = covariate_adjust(d, spec, h_left, h_right, &cfg.fit_options())
            .map_err(|e| e.at_stage(Stage::Covariates))?;
        &adjusted
    } else {
        d
    };
    let split = SplitSample::new(data);
    let a = Analysis::compute(&split, spec, cfg, h_left, h_right)?;
    let ci = rbc_interval(a.tau, a.bias, a.v_robust, spec.alpha).map_err(|e| e.at_stage(Stage::Variance))?;
    Ok(DesignRun {
        result: EstimateResult {
            tau: a.tau,
            bias: a.bias,
            se_conventional: a.v_conventional.sqrt(),
            se_robust: a.v_robust.sqrt(),
            ci_low: ci.low,
            ci_high: ci.high,
            p_value: ci.p_value,
            h_left,
            h_right,
            n_left: a.n_left,
            n_right: a.n_right,
            first_stage_jump: a.first_stage_jump,
        },
        outcome_fits: a.outcome_fits,
        treatment_fits: a.treatment_fits,
    })
}

/// Bandwidth selection, point estimate, bias, variance and interval in one call.
pub fn run_design(d: &Dataset, spec: &DesignSpec, cfg: &InferenceConfig) -> Result<EstimateResult> {
    run_design_detailed(d, spec, cfg).map(|r| r.result)
}

#[cfg(test)]
mod tests;
