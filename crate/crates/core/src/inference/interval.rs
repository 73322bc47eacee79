use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{RdError, Result};

/// Robust bias-corrected confidence interval with its two-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbcInterval {
    pub low: f64,
    pub high: f64,
    pub p_value: f64,
    /// Zero robust variance: the interval collapses to a point.
    pub degenerate: bool,
}

fn standard_normal() -> Normal {
    Normal::standard()
}

/// `Phi^{-1}(1 - alpha/2)`.
pub fn normal_critical_value(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(RdError::Parameter(format!("alpha must lie in (0,1), got {alpha}")));
    }
    Ok(standard_normal().inverse_cdf(1.0 - alpha / 2.0))
}

/// Two-sided normal p-value of a t statistic.
pub fn two_sided_p_value(t: f64) -> f64 {
    (2.0 * standard_normal().cdf(-t.abs())).min(1.0)
}

/// Interval centred at `tau - bias` with half-width `Phi^{-1}(1-alpha/2) * sqrt(v_robust)`.
pub fn rbc_interval(tau: f64, bias: f64, v_robust: f64, alpha: f64) -> Result<RbcInterval> {
    if !(v_robust >= 0.0) || !v_robust.is_finite() {
        return Err(RdError::Parameter(format!(
            "robust variance must be finite and nonnegative, got {v_robust}"
        )));
    }
    let crit = normal_critical_value(alpha)?;
    let center = tau - bias;
    let se = v_robust.sqrt();
    if se == 0.0 {
        let p_value = if center == 0.0 { 1.0 } else { 0.0 };
        return Ok(RbcInterval {
            low: center,
            high: center,
            p_value,
            degenerate: true,
        });
    }
    Ok(RbcInterval {
        low: center - crit * se,
        high: center + crit * se,
        p_value: two_sided_p_value(center / se),
        degenerate: false,
    })
}

/// Significance stars: `***` p<0.001, `**` p<0.01, `*` p<0.05, `•` p<0.1.
pub fn star_label(p_value: f64) -> &'static str {
    if p_value < 0.001 {
        "***"
    } else if p_value < 0.01 {
        "**"
    } else if p_value < 0.05 {
        "*"
    } else if p_value < 0.1 {
        "•"
    } else {
        ""
    }
}
