//! Weighted descriptive statistics in the survey-table layout
//! (n, proportion or mean, standard deviation).

use serde::{Deserialize, Serialize};

use super::{derive_indicators, HouseholdRow, SurveyVariable};
use crate::model::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatKind {
    /// 0/1 variable: the value is a weighted proportion.
    Proportion,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variable: String,
    pub n: usize,
    pub kind: StatKind,
    pub value: f64,
    /// Weighted population standard deviation.
    pub sd: f64,
}

fn summarize(variable: &str, pairs: &[(f64, f64)]) -> SummaryRow {
    let total: f64 = pairs.iter().map(|(_, w)| w).sum();
    let mean = pairs.iter().map(|(v, w)| v * w).sum::<f64>() / total;
    let var = pairs.iter().map(|(v, w)| w * (v - mean).powi(2)).sum::<f64>() / total;
    let binary = pairs.iter().all(|(v, _)| *v == 0.0 || *v == 1.0);
    SummaryRow {
        variable: variable.to_string(),
        n: pairs.len(),
        kind: if binary { StatKind::Proportion } else { StatKind::Mean },
        value: mean,
        sd: var.sqrt(),
    }
}

/// Summaries of named columns of `(value, weight)` pairs; empty columns are skipped.
pub fn describe_columns(columns: &[(String, Vec<(f64, f64)>)]) -> Vec<SummaryRow> {
    columns
        .iter()
        .filter(|(_, c)| !c.is_empty())
        .map(|(name, c)| summarize(name, c))
        .collect()
}

/// Outcome, treatment and covariates of a dataset, weighted by expansion factors.
pub fn descriptive_table(d: &Dataset) -> Vec<SummaryRow> {
    let mut columns = vec![
        (d.outcome_name.clone(), d.observations.iter().map(|o| (o.y, o.weight)).collect()),
        (d.treatment_name.clone(), d.observations.iter().map(|o| (o.x, o.weight)).collect()),
    ];
    for (j, name) in d.covariate_names.iter().enumerate() {
        columns.push((
            name.clone(),
            d.observations.iter().map(|o| (o.covariates[j], o.weight)).collect(),
        ));
    }
    describe_columns(&columns)
}

/// Every survey variable over parsed households; each variable uses the rows where it is present.
pub fn describe_households(rows: &[HouseholdRow]) -> Vec<SummaryRow> {
    let derived: Vec<_> = rows.iter().map(|h| derive_indicators(h).ok()).collect();
    let columns: Vec<(String, Vec<(f64, f64)>)> = SurveyVariable::ALL
        .iter()
        .map(|v| {
            let values = rows
                .iter()
                .zip(&derived)
                .filter_map(|(h, d)| Some((v.value(h, d.as_ref()?)?, h.expansion_factor)))
                .collect();
            (v.name().to_string(), values)
        })
        .collect();
    describe_columns(&columns)
}
