//! Domain types shared across the estimation pipeline.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{RdError, Result};

/// One unit of analysis (a household in survey data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub id: String,
    /// Running variable, already centred so the cutoff is usually 0.
    pub z: f64,
    pub y: f64,
    /// Treatment indicator. Only raw rows are required to be 0/1.
    pub x: f64,
    pub covariates: Vec<f64>,
    /// Survey expansion factor.
    pub weight: f64,
}

impl Observation {
    pub fn new(z: f64, y: f64, x: f64) -> Self {
        Self {
            id: String::new(),
            z,
            y,
            x,
            covariates: Vec::new(),
            weight: 1.0,
        }
    }

    pub fn with_covariates(mut self, covariates: Vec<f64>) -> Self {
        self.covariates = covariates;
        self
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub observations: Vec<Observation>,
    pub cutoff: f64,
    pub covariate_names: Vec<String>,
    pub outcome_name: String,
    pub treatment_name: String,
}

impl Dataset {
    /// Dataset with no covariates and cutoff 0. Row ids default to the row index.
    pub fn from_observations(mut observations: Vec<Observation>) -> Self {
        for (i, obs) in observations.iter_mut().enumerate() {
            if obs.id.is_empty() {
                obs.id = i.to_string();
            }
        }
        Self {
            observations,
            cutoff: 0.0,
            covariate_names: Vec::new(),
            outcome_name: "y".to_string(),
            treatment_name: "x".to_string(),
        }
    }

    pub fn with_covariate_names(mut self, names: Vec<String>) -> Self {
        self.covariate_names = names;
        self
    }

    pub fn with_cutoff(mut self, cutoff: f64) -> Self {
        self.cutoff = cutoff;
        self
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Side of the cutoff an observation falls on; rows at the cutoff are right.
    pub fn side_of(&self, z: f64) -> Side {
        if z < self.cutoff {
            Side::Left
        } else {
            Side::Right
        }
    }

    pub fn map_outcome(&self, mut f: impl FnMut(&Observation) -> f64) -> Dataset {
        let mut out = self.clone();
        for obs in &mut out.observations {
            obs.y = f(obs);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    Sharp,
    Fuzzy,
}

impl fmt::Display for DesignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DesignKind::Sharp => "sharp",
            DesignKind::Fuzzy => "fuzzy",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    #[default]
    Triangular,
    Uniform,
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelKind::Triangular => "triangular",
            KernelKind::Uniform => "uniform",
        })
    }
}

/// How bandwidths are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// One pooled bandwidth applied to both sides.
    Auto,
    /// Separate plug-in bandwidths evaluated on each side's data.
    AutoPerSide,
    Fixed { h_left: f64, h_right: f64 },
}

/// Full estimation configuration for one design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub kind: DesignKind,
    /// Derivative order: 0 for a level discontinuity, 1 for a kink.
    pub q: usize,
    /// Local polynomial order.
    pub p: usize,
    pub kernel: KernelKind,
    pub bandwidth: BandwidthRule,
    pub use_covariates: bool,
    pub alpha: f64,
}

impl DesignSpec {
    pub fn sharp(p: usize) -> Self {
        Self {
            kind: DesignKind::Sharp,
            q: 0,
            p,
            kernel: KernelKind::Triangular,
            bandwidth: BandwidthRule::Auto,
            use_covariates: false,
            alpha: 0.05,
        }
    }

    pub fn fuzzy(p: usize) -> Self {
        Self {
            kind: DesignKind::Fuzzy,
            ..Self::sharp(p)
        }
    }

    pub fn kink(mut self) -> Self {
        self.q = 1;
        self
    }

    pub fn with_q(mut self, q: usize) -> Self {
        self.q = q;
        self
    }

    pub fn with_bandwidths(mut self, h_left: f64, h_right: f64) -> Self {
        self.bandwidth = BandwidthRule::Fixed { h_left, h_right };
        self
    }

    pub fn with_bandwidth_rule(mut self, rule: BandwidthRule) -> Self {
        self.bandwidth = rule;
        self
    }

    pub fn with_kernel(mut self, kernel: KernelKind) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_covariates(mut self, on: bool) -> Self {
        self.use_covariates = on;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.q > 1 {
            return Err(RdError::Parameter(format!(
                "derivative order q must be 0 or 1, got {}",
                self.q
            )));
        }
        if self.p < self.q.max(1) || self.p > 2 {
            return Err(RdError::Parameter(format!(
                "polynomial order p must satisfy max(q, 1) <= p <= 2, got p={} q={}",
                self.p, self.q
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(RdError::Parameter(format!(
                "alpha must lie in (0,1), got {}",
                self.alpha
            )));
        }
        if let BandwidthRule::Fixed { h_left, h_right } = self.bandwidth {
            if !(h_left > 0.0 && h_right > 0.0 && h_left.is_finite() && h_right.is_finite()) {
                return Err(RdError::Parameter(format!(
                    "fixed bandwidths must be positive and finite, got ({h_left}, {h_right})"
                )));
            }
        }
        Ok(())
    }
}

/// One-sided local polynomial fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSide {
    pub side: Side,
    /// Coefficients in the basis `(z - cutoff)^j`, `j = 0..=p`.
    pub coefficients: Vec<f64>,
    /// Rows with nonzero combined weight.
    pub n_effective: usize,
    pub bandwidth: f64,
    pub weight_sum: f64,
}

impl FitSide {
    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn slope(&self) -> f64 {
        self.coefficients.get(1).copied().unwrap_or(0.0)
    }

    /// Evaluates the fitted polynomial at offset `dz = z - cutoff`.
    pub fn evaluate(&self, dz: f64) -> f64 {
        self.coefficients
            .iter()
            .rev()
            .fold(0.0, |acc, &c| acc * dz + c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub tau: f64,
    pub bias: f64,
    pub se_conventional: f64,
    pub se_robust: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub h_left: f64,
    pub h_right: f64,
    pub n_left: usize,
    pub n_right: usize,
    pub first_stage_jump: Option<f64>,
}

impl EstimateResult {
    pub fn bias_corrected(&self) -> f64 {
        self.tau - self.bias
    }
}

/// Dataset invariant names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    NoLeftObservations,
    NoRightObservations,
    NonpositiveWeight,
    NonBinaryTreatment,
    CovariateArity,
    NonFiniteValue,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::NoLeftObservations => "no observations left of cutoff",
            Rule::NoRightObservations => "no observations right of cutoff",
            Rule::NonpositiveWeight => "nonpositive weight",
            Rule::NonBinaryTreatment => "treatment not in {0,1}",
            Rule::CovariateArity => "covariate arity mismatch",
            Rule::NonFiniteValue => "non-finite value",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub row: Option<usize>,
    pub rule: Rule,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.row {
            Some(row) => write!(f, "{} at row {row}", self.rule),
            None => write!(f, "{}", self.rule),
        }
    }
}

/// Checks every dataset and observation invariant. An empty result means the
/// dataset is well formed.
pub fn validate_dataset(d: &Dataset) -> Vec<Finding> {
    let mut findings = Vec::new();
    let arity = d.covariate_names.len();
    for (row, obs) in d.observations.iter().enumerate() {
        let finite = obs.z.is_finite()
            && obs.y.is_finite()
            && obs.x.is_finite()
            && obs.weight.is_finite()
            && obs.covariates.iter().all(|c| c.is_finite());
        if !finite {
            findings.push(Finding {
                row: Some(row),
                rule: Rule::NonFiniteValue,
            });
        }
        if !(obs.weight > 0.0) {
            findings.push(Finding {
                row: Some(row),
                rule: Rule::NonpositiveWeight,
            });
        }
        if obs.x != 0.0 && obs.x != 1.0 {
            findings.push(Finding {
                row: Some(row),
                rule: Rule::NonBinaryTreatment,
            });
        }
        if obs.covariates.len() != arity {
            findings.push(Finding {
                row: Some(row),
                rule: Rule::CovariateArity,
            });
        }
    }
    if !d.observations.iter().any(|o| o.z < d.cutoff) {
        findings.push(Finding {
            row: None,
            rule: Rule::NoLeftObservations,
        });
    }
    if !d.observations.iter().any(|o| o.z > d.cutoff) {
        findings.push(Finding {
            row: None,
            rule: Rule::NoRightObservations,
        });
    }
    findings
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_sided() -> Dataset {
        Dataset::from_observations(vec![
            Observation::new(-1.0, 0.0, 0.0),
            Observation::new(-0.5, 0.2, 0.0),
            Observation::new(0.5, 1.0, 1.0),
            Observation::new(1.0, 1.1, 1.0),
        ])
    }

    #[test]
    fn well_formed_dataset_has_no_findings() {
        assert!(validate_dataset(&two_sided()).is_empty());
    }

    #[test]
    fn one_sided_dataset_is_flagged() {
        let d = Dataset::from_observations(vec![
            Observation::new(0.5, 1.0, 1.0),
            Observation::new(1.0, 1.0, 1.0),
        ]);
        let findings = validate_dataset(&d);
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].rule, Rule::NoLeftObservations);
        assert_eq!(findings[0].to_string(), "no observations left of cutoff");
    }

    #[test]
    fn zero_weight_row_is_flagged_with_index() {
        let mut d = two_sided();
        d.observations[2].weight = 0.0;
        let findings = validate_dataset(&d);
        assert_eq!(
            findings,
            vec![Finding {
                row: Some(2),
                rule: Rule::NonpositiveWeight
            }]
        );
        assert_eq!(findings[0].to_string(), "nonpositive weight at row 2");
    }

    #[test]
    fn arity_and_treatment_violations() {
        let mut d = two_sided().with_covariate_names(vec!["c".into()]);
        for obs in &mut d.observations {
            obs.covariates = vec![0.0];
        }
        d.observations[0].covariates.clear();
        d.observations[3].x = 0.5;
        let rules: Vec<_> = validate_dataset(&d).into_iter().map(|f| f.rule).collect();
        assert_eq!(rules, vec![Rule::CovariateArity, Rule::NonBinaryTreatment]);
    }

    #[test]
    fn validation_is_pure() {
        let mut d = two_sided();
        d.observations[1].weight = -1.0;
        assert_eq!(validate_dataset(&d), validate_dataset(&d));
    }

    #[test]
    fn cutoff_row_belongs_right() {
        let d = two_sided();
        assert_eq!(d.side_of(0.0), Side::Right);
        assert_eq!(d.side_of(-1e-12), Side::Left);
    }

    #[test]
    fn design_spec_order_constraints() {
        assert!(DesignSpec::sharp(1).validate().is_ok());
        assert!(DesignSpec::sharp(2).kink().validate().is_ok());
        assert!(DesignSpec::sharp(1).kink().validate().is_ok());
        assert!(DesignSpec::sharp(0).validate().is_err());
        assert!(DesignSpec::sharp(1).with_q(2).validate().is_err());
        assert!(DesignSpec::sharp(3).validate().is_err());
        assert!(DesignSpec::sharp(1).with_alpha(1.0).validate().is_err());
        assert!(DesignSpec::sharp(1)
            .with_bandwidths(0.0, 1.0)
            .validate()
            .is_err());
    }

    #[test]
    fn fit_side_evaluates_horner() {
        let fit = FitSide {
            side: Side::Right,
            coefficients: vec![1.0, 2.0, 3.0],
            n_effective: 3,
            bandwidth: 1.0,
            weight_sum: 1.0,
        };
        assert_eq!(fit.evaluate(2.0), 1.0 + 4.0 + 12.0);
    }
}
