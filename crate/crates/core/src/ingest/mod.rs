//! Household survey ingestion: running variable, spending indicators,
//! expansion weights, canonical dataset files and weighted descriptives.

mod canonical;
mod describe;
mod survey;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{RdError, Result};

pub use canonical::{metadata_path, read_dataset, write_dataset, DatasetMetadata};
pub use describe::{describe_columns, describe_households, descriptive_table, StatKind, SummaryRow};
pub use survey::{
    load_households, load_survey, DroppedRow, Encoding, IngestReport, SchemaMap, SexCodes, SurveyOptions,
};

/// Statutory retirement age plus one administrative year.
pub const FEMALE_THRESHOLD_AGE: i32 = 61;
pub const MALE_THRESHOLD_AGE: i32 = 66;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
}

/// Years from the head of household's pension-eligibility threshold.
pub fn running_variable(age: i32, sex: Sex) -> Result<f64> {
    if !(18..=110).contains(&age) {
        return Err(RdError::Validation(format!("age {age} outside [18, 110]")));
    }
    let threshold = match sex {
        Sex::Female => FEMALE_THRESHOLD_AGE,
        Sex::Male => MALE_THRESHOLD_AGE,
    };
    Ok(f64::from(age - threshold))
}

/// One household, characterised by its head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdRow {
    pub household_id: String,
    pub head_age: i32,
    pub head_sex: Sex,
    pub head_inactive: bool,
    pub pami: bool,
    pub any_insurance: bool,
    pub voluntary: bool,
    pub multiple: bool,
    pub expansion_factor: f64,
    pub total_spend_pc: f64,
    pub health_spend_pc: f64,
    pub pharma: Option<bool>,
    pub medical_services: Option<bool>,
    pub dental: Option<bool>,
    pub equipment: Option<bool>,
}

impl HouseholdRow {
    pub fn validate(&self) -> Result<()> {
        running_variable(self.head_age, self.head_sex)?;
        if !(self.expansion_factor > 0.0) || !self.expansion_factor.is_finite() {
            return Err(RdError::Validation(format!(
                "nonpositive expansion factor {}",
                self.expansion_factor
            )));
        }
        if !(self.total_spend_pc > 0.0) || !self.total_spend_pc.is_finite() {
            return Err(RdError::Validation(format!(
                "nonpositive total spend {}",
                self.total_spend_pc
            )));
        }
        if !(self.health_spend_pc >= 0.0) || !self.health_spend_pc.is_finite() {
            return Err(RdError::Validation(format!(
                "negative health spend {}",
                self.health_spend_pc
            )));
        }
        if self.multiple && !self.any_insurance {
            return Err(RdError::Validation("multiple insurance without any insurance".into()));
        }
        Ok(())
    }

    pub fn z(&self) -> Result<f64> {
        running_variable(self.head_age, self.head_sex)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedIndicators {
    /// Health spending as a share of total spending.
    pub gbs_share: f64,
    pub cat10: bool,
    pub cat25: bool,
    pub lgasto: f64,
    /// Log health spending; absent when spending is zero.
    pub lgsalud: Option<f64>,
}

pub fn derive_indicators(row: &HouseholdRow) -> Result<DerivedIndicators> {
    if !(row.total_spend_pc > 0.0) {
        return Err(RdError::Validation(format!(
            "nonpositive total spend {}",
            row.total_spend_pc
        )));
    }
    let gbs_share = row.health_spend_pc / row.total_spend_pc;
    Ok(DerivedIndicators {
        gbs_share,
        cat10: gbs_share > 0.10,
        cat25: gbs_share > 0.25,
        lgasto: row.total_spend_pc.ln(),
        lgsalud: (row.health_spend_pc > 0.0).then(|| row.health_spend_pc.ln()),
    })
}

/// Analysis variables that can be selected as outcome, treatment or covariate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SurveyVariable {
    Pami,
    AnyInsurance,
    Voluntary,
    Multiple,
    GbsShare,
    Cat10,
    Cat25,
    Lgasto,
    Lgsalud,
    HealthSpend,
    Pharma,
    MedicalServices,
    Dental,
    Equipment,
    /// 1 for a female head.
    Sexo,
    /// 1 for an economically inactive head.
    Inac,
}

impl SurveyVariable {
    pub const ALL: [SurveyVariable; 16] = [
        SurveyVariable::Pami,
        SurveyVariable::AnyInsurance,
        SurveyVariable::Voluntary,
        SurveyVariable::Multiple,
        SurveyVariable::GbsShare,
        SurveyVariable::Cat10,
        SurveyVariable::Cat25,
        SurveyVariable::Lgasto,
        SurveyVariable::Lgsalud,
        SurveyVariable::HealthSpend,
        SurveyVariable::Pharma,
        SurveyVariable::MedicalServices,
        SurveyVariable::Dental,
        SurveyVariable::Equipment,
        SurveyVariable::Sexo,
        SurveyVariable::Inac,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SurveyVariable::Pami => "pami",
            SurveyVariable::AnyInsurance => "any_insurance",
            SurveyVariable::Voluntary => "voluntary",
            SurveyVariable::Multiple => "multiple",
            SurveyVariable::GbsShare => "gbs_share",
            SurveyVariable::Cat10 => "cat10",
            SurveyVariable::Cat25 => "cat25",
            SurveyVariable::Lgasto => "lgasto",
            SurveyVariable::Lgsalud => "lgsalud",
            SurveyVariable::HealthSpend => "health_spend",
            SurveyVariable::Pharma => "pharma",
            SurveyVariable::MedicalServices => "medical_services",
            SurveyVariable::Dental => "dental",
            SurveyVariable::Equipment => "equipment",
            SurveyVariable::Sexo => "sexo",
            SurveyVariable::Inac => "inac",
        }
    }

    pub fn is_consumption_flag(self) -> bool {
        matches!(
            self,
            SurveyVariable::Pharma
                | SurveyVariable::MedicalServices
                | SurveyVariable::Dental
                | SurveyVariable::Equipment
        )
    }

    /// Value for one household; `None` when missing for this variable.
    pub fn value(self, row: &HouseholdRow, derived: &DerivedIndicators) -> Option<f64> {
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        match self {
            SurveyVariable::Pami => Some(flag(row.pami)),
            SurveyVariable::AnyInsurance => Some(flag(row.any_insurance)),
            SurveyVariable::Voluntary => Some(flag(row.voluntary)),
            SurveyVariable::Multiple => Some(flag(row.multiple)),
            SurveyVariable::GbsShare => Some(derived.gbs_share),
            SurveyVariable::Cat10 => Some(flag(derived.cat10)),
            SurveyVariable::Cat25 => Some(flag(derived.cat25)),
            SurveyVariable::Lgasto => Some(derived.lgasto),
            SurveyVariable::Lgsalud => derived.lgsalud,
            SurveyVariable::HealthSpend => Some(row.health_spend_pc),
            SurveyVariable::Pharma => row.pharma.map(flag),
            SurveyVariable::MedicalServices => row.medical_services.map(flag),
            SurveyVariable::Dental => row.dental.map(flag),
            SurveyVariable::Equipment => row.equipment.map(flag),
            SurveyVariable::Sexo => Some(flag(row.head_sex == Sex::Female)),
            SurveyVariable::Inac => Some(flag(row.head_inactive)),
        }
    }
}

impl fmt::Display for SurveyVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SurveyVariable {
    type Err = RdError;

    fn from_str(s: &str) -> Result<Self> {
        SurveyVariable::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| RdError::Validation(format!("unknown survey variable `{s}`")))
    }
}

impl TryFrom<String> for SurveyVariable {
    type Error = RdError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SurveyVariable> for String {
    fn from(v: SurveyVariable) -> String {
        v.name().to_string()
    }
}
