//! Plug-in bandwidth selection.
//!
//! The selected bandwidth minimises the asymptotic MSE
//! `h^{2(p+1-q)} B^2 + V / (n h^{1+2q})`, giving
//! `h = [(1+2q) V / (2(1+p-q) B^2)]^{1/(2p+3)} n^{-1/(2p+3)}`.
//! `V` and `B^2` are pilot estimates:
//!
//! 1. A rule-of-thumb pilot `c = C_K min(sd, IQR/1.349) n^{-1/5}` (clipped to
//!    each side's range) gives the variance constant `V = n c^{1+2q} Var(tau_c)`.
//! 2. A global order-`p+2` polynomial per side gives a crude `(p+2)`-th
//!    coefficient, used to pick the bandwidth `b` for the `(p+1)`-th
//!    coefficient by the same formula.
//! 3. Order-`p+1` fits at `b` give the `(p+1)`-th coefficients; the squared
//!    bias constant is `B^2 + Var(B)`, the variance term regularising the
//!    denominator when the two sides' curvatures cancel.
//!
//! Fuzzy designs run every step on the linearised response
//! `(y - tau_c x) / (x^+ - x^-)`.

use serde::{Deserialize, Serialize};

use super::{composite, residual_variance, variance::sandwich, InferenceConfig, VarianceEstimator};
use crate::error::{RdError, Result, Stage};
use crate::estimators::{components, ratio, SideDesigns};
use crate::localpoly::{LocalDesign, SideSample, SplitSample, Variable};
use crate::model::{Dataset, DesignKind, DesignSpec, KernelKind, Side};

/// Pilot values below this are treated as zero curvature.
pub const DEGENERATE_BIAS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthSide {
    Left,
    Right,
    Pooled,
}

/// Inputs of the bandwidth formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PilotEstimates {
    /// Variance constant `V`.
    pub variance: f64,
    /// Squared-bias constant `B^2` (regularised).
    pub bias: f64,
    pub n: usize,
}

/// `[(1+2q) v / (2(1+p-q) b)]^{1/(2p+3)} n^{-1/(2p+3)}`.
pub fn bandwidth_formula(variance: f64, bias: f64, p: usize, q: usize, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(RdError::SampleSize { needed: 1, available: 0 });
    }
    if q > p {
        return Err(RdError::Parameter(format!("derivative order {q} exceeds polynomial order {p}")));
    }
    if !bias.is_finite() || bias.abs() < DEGENERATE_BIAS {
        return Err(RdError::DegenerateCurvature { value: bias });
    }
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(RdError::Parameter(format!("pilot variance must be positive, got {variance}")));
    }
    if bias < 0.0 {
        return Err(RdError::Parameter(format!("pilot squared-bias term must be positive, got {bias}")));
    }
    let exponent = 1.0 / (2 * p + 3) as f64;
    let ratio = (1 + 2 * q) as f64 * variance / (2.0 * (1 + p - q) as f64 * bias);
    Ok(ratio.powf(exponent) * (n as f64).powf(-exponent))
}

fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * prob;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn rule_of_thumb(d: &Dataset, kernel: KernelKind) -> f64 {
    let n = d.len() as f64;
    let mut z: Vec<f64> = d.observations.iter().map(|o| o.z).collect();
    z.sort_by(f64::total_cmp);
    let mean = z.iter().sum::<f64>() / n;
    let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let iqr = (quantile(&z, 0.75) - quantile(&z, 0.25)) / 1.349;
    let spread = if iqr > 0.0 { sd.min(iqr) } else { sd };
    kernel.pilot_constant() * spread * n.powf(-0.2)
}

/// Smallest bandwidth giving `m_min` rows with positive kernel weight.
fn lower_bound(sample: &SideSample, m_min: usize) -> Result<f64> {
    if sample.len() < m_min {
        return Err(RdError::SampleSize {
            needed: m_min,
            available: sample.len(),
        }
        .on_side(sample.side));
    }
    Ok(sample.dz[m_min - 1].abs() * (1.0 + 1e-9) + 1e-12)
}

fn upper_bound(sample: &SideSample) -> f64 {
    sample.reach() * (1.0 + 1e-9) + 1e-12
}

fn clamp_to_side(h: f64, sample: &SideSample, m_min: usize) -> Result<f64> {
    Ok(h.min(upper_bound(sample)).max(lower_bound(sample, m_min)?))
}

fn min_rows(spec: &DesignSpec, cfg: &InferenceConfig) -> usize {
    let k = match cfg.variance_estimator {
        VarianceEstimator::NearestNeighbor { k } => k,
        VarianceEstimator::HcPlugin => 0,
    };
    (spec.p + cfg.bias_order_increment + 2).max(spec.p + 3).max(k + 1)
}

struct SidePilot {
    c: f64,
    var_main: f64,
    var_deriv: f64,
    kappa: f64,
    kappa_deriv: f64,
    global_coef: f64,
    global_var: f64,
}

fn sides_for(which: BandwidthSide) -> Vec<Side> {
    match which {
        BandwidthSide::Left => vec![Side::Left],
        BandwidthSide::Right => vec![Side::Right],
        BandwidthSide::Pooled => vec![Side::Left, Side::Right],
    }
}

fn sign(side: Side) -> f64 {
    match side {
        Side::Left => -1.0,
        Side::Right => 1.0,
    }
}

/// Pilot variance and squared-bias constants for the bandwidth formula.
pub fn pilot_estimates(
    d: &Dataset,
    spec: &DesignSpec,
    cfg: &InferenceConfig,
    which: BandwidthSide,
) -> Result<PilotEstimates> {
    spec.validate()?;
    cfg.validate()?;
    let split = SplitSample::new(d);
    let n = split.n_total();
    let (p, q) = (spec.p, spec.q);
    let m_min = min_rows(spec, cfg);
    let sw = cfg.use_survey_weights;
    let est = cfg.variance_estimator;

    let c0 = rule_of_thumb(d, spec.kernel);
    let c_left = clamp_to_side(c0, &split.left, m_min)?;
    let c_right = clamp_to_side(c0, &split.right, m_min)?;

    let main = SideDesigns::new(&split, spec, p, c_left, c_right, sw)?;
    let (u_left, u_right) = match spec.kind {
        DesignKind::Sharp => (split.left.y.clone(), split.right.y.clone()),
        DesignKind::Fuzzy => {
            let outcome = main.fits(&split, Variable::Outcome);
            let treatment = main.fits(&split, Variable::Treatment);
            let comps = components(spec, &outcome, Some(&treatment));
            let tau = ratio(&comps, cfg.first_stage_floor)?;
            let dx = comps.treatment_jump().unwrap_or(1.0);
            let scale = |s: &SideSample| -> Vec<f64> {
                composite(&s.y, &s.x, Some(tau)).into_iter().map(|u| u / dx).collect()
            };
            (scale(&split.left), scale(&split.right))
        }
    };
    let u_of = |side: Side| match side {
        Side::Left => &u_left,
        Side::Right => &u_right,
    };

    let sides = sides_for(which);
    let mut pilots = Vec::new();
    for &side in &sides {
        let sample = split.side(side);
        let c = match side {
            Side::Left => c_left,
            Side::Right => c_right,
        };
        let u = u_of(side);
        let order_p = main.side(side);
        let order_p1 = LocalDesign::new(sample, spec.kernel, c, p + 1, sw)?;
        let sigma_p = residual_variance(order_p, u, est)?;
        let sigma_p1 = residual_variance(&order_p1, u, est)?;

        let global = LocalDesign::new(sample, KernelKind::Uniform, upper_bound(sample) * 2.0, p + 2, sw)?;
        let gcoefs = global.coefficients(u);
        let resid2: Vec<f64> = global
            .dz
            .iter()
            .zip(u.iter())
            .map(|(dz, y)| (y - gcoefs.iter().rev().fold(0.0, |acc, ci| acc * dz + ci)).powi(2))
            .collect();

        pilots.push((
            side,
            SidePilot {
                c,
                var_main: sandwich(&order_p.functional(q), &sigma_p),
                var_deriv: sandwich(&order_p1.functional(p + 1), &sigma_p1),
                kappa: order_p.projection(q, p + 1) / c.powi((p + 1 - q) as i32),
                kappa_deriv: order_p1.projection(p + 1, p + 2) / c,
                global_coef: gcoefs[p + 2],
                global_var: sandwich(&global.functional(p + 2), &resid2),
            },
        ));
    }

    let nf = n as f64;
    // Bandwidth for the (p+1)-th coefficient.
    let v_b: f64 = pilots
        .iter()
        .map(|(_, s)| nf * s.c.powi((2 * p + 3) as i32) * s.var_deriv)
        .sum();
    let b_b: f64 = pilots
        .iter()
        .map(|(side, s)| sign(*side) * s.kappa_deriv * s.global_coef)
        .sum();
    let r_b: f64 = pilots
        .iter()
        .map(|(_, s)| s.kappa_deriv.powi(2) * s.global_var)
        .sum();
    let b = bandwidth_formula(v_b, b_b * b_b + r_b, p + 1, p + 1, n)?;

    let mut v_h = 0.0;
    let mut b_h = 0.0;
    let mut r_h = 0.0;
    for (side, s) in &pilots {
        let sample = split.side(*side);
        let b_side = clamp_to_side(b, sample, m_min)?;
        let design = LocalDesign::new(sample, spec.kernel, b_side, p + 1, sw)?;
        let u = u_of(*side);
        let beta = design.coefficients(u)[p + 1];
        let sigma = residual_variance(&design, u, est)?;
        let var_beta = sandwich(&design.functional(p + 1), &sigma);
        v_h += nf * s.c.powi((1 + 2 * q) as i32) * s.var_main;
        b_h += sign(*side) * s.kappa * beta;
        r_h += s.kappa.powi(2) * var_beta;
    }
    Ok(PilotEstimates {
        variance: v_h,
        bias: b_h * b_h + r_h,
        n,
    })
}

/// Data-driven bandwidth for one side or both sides pooled.
pub fn select_bandwidth(
    d: &Dataset,
    spec: &DesignSpec,
    cfg: &InferenceConfig,
    which: BandwidthSide,
) -> Result<f64> {
    let pilot = pilot_estimates(d, spec, cfg, which).map_err(|e| e.at_stage(Stage::Bandwidth))?;
    let h = bandwidth_formula(pilot.variance, pilot.bias, spec.p, spec.q, pilot.n)
        .map_err(|e| e.at_stage(Stage::Bandwidth))?;
    let split = SplitSample::new(d);
    let m_min = min_rows(spec, cfg);
    let bounded = |s: &SideSample| clamp_to_side(h, s, m_min);
    let h = match which {
        BandwidthSide::Left => bounded(&split.left)?,
        BandwidthSide::Right => bounded(&split.right)?,
        BandwidthSide::Pooled => {
            let lower = lower_bound(&split.left, m_min)?.max(lower_bound(&split.right, m_min)?);
            let upper = upper_bound(&split.left).max(upper_bound(&split.right));
            h.min(upper).max(lower)
        }
    };
    Ok(h)
}
