use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{derive_indicators, HouseholdRow, Sex, SurveyVariable};
use crate::error::{RdError, Result};
use crate::model::{Dataset, Observation};

/// Input column name for each household field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaMap {
    pub household_id: String,
    pub head_age: String,
    pub head_sex: String,
    pub head_inactive: String,
    pub pami: String,
    pub any_insurance: String,
    pub voluntary: String,
    pub multiple: String,
    pub expansion_factor: String,
    pub total_spend_pc: String,
    pub health_spend_pc: String,
    pub pharma: Option<String>,
    pub medical_services: Option<String>,
    pub dental: Option<String>,
    pub equipment: Option<String>,
}

impl Default for SchemaMap {
    fn default() -> Self {
        Self {
            household_id: "household_id".into(),
            head_age: "head_age".into(),
            head_sex: "head_sex".into(),
            head_inactive: "head_inactive".into(),
            pami: "pami".into(),
            any_insurance: "any_insurance".into(),
            voluntary: "voluntary".into(),
            multiple: "multiple".into(),
            expansion_factor: "expansion_factor".into(),
            total_spend_pc: "total_spend_pc".into(),
            health_spend_pc: "health_spend_pc".into(),
            pharma: Some("pharma".into()),
            medical_services: Some("medical_services".into()),
            dental: Some("dental".into()),
            equipment: Some("equipment".into()),
        }
    }
}

impl SchemaMap {
    fn required(&self) -> [&str; 11] {
        [
            &self.household_id,
            &self.head_age,
            &self.head_sex,
            &self.head_inactive,
            &self.pami,
            &self.any_insurance,
            &self.voluntary,
            &self.multiple,
            &self.expansion_factor,
            &self.total_spend_pc,
            &self.health_spend_pc,
        ]
    }

    fn optional(&self) -> [Option<&str>; 4] {
        [
            self.pharma.as_deref(),
            self.medical_services.as_deref(),
            self.dental.as_deref(),
            self.equipment.as_deref(),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Encoding {
    #[default]
    #[serde(rename = "utf-8", alias = "utf8")]
    Utf8,
    #[serde(rename = "latin1", alias = "iso-8859-1")]
    Latin1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SexCodes {
    pub female: String,
    pub male: String,
}

impl Default for SexCodes {
    fn default() -> Self {
        Self {
            female: "1".into(),
            male: "0".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurveyOptions {
    pub delimiter: char,
    pub encoding: Encoding,
    pub outcome: SurveyVariable,
    pub treatment: SurveyVariable,
    pub covariates: Vec<SurveyVariable>,
    pub sex_codes: SexCodes,
}

impl Default for SurveyOptions {
    fn default() -> Self {
        Self {
            delimiter: ',',
            encoding: Encoding::Utf8,
            outcome: SurveyVariable::AnyInsurance,
            treatment: SurveyVariable::Pami,
            covariates: Vec::new(),
            sex_codes: SexCodes::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedRow {
    /// 1-based data row (the header is not counted).
    pub row: usize,
    pub household_id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub source: String,
    pub provenance_hash: String,
    pub rows_read: usize,
    pub kept: usize,
    pub dropped: Vec<DroppedRow>,
    /// Rows with at least one missing consumption flag.
    pub missing_flag_rows: usize,
}

impl IngestReport {
    pub fn reconciles(&self) -> bool {
        self.rows_read == self.kept + self.dropped.len()
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "read {} rows, kept {}, {} dropped, {} with missing consumption flags\n",
            self.rows_read,
            self.kept,
            self.dropped.len(),
            self.missing_flag_rows
        );
        for d in &self.dropped {
            s.push_str(&format!(
                "  row {} ({}): {}\n",
                d.row,
                d.household_id.as_deref().unwrap_or("?"),
                d.reason
            ));
        }
        s
    }
}

fn decode(bytes: &[u8], encoding: Encoding) -> Result<String> {
    match encoding {
        Encoding::Utf8 => String::from_utf8(bytes.to_vec())
            .map_err(|e| RdError::Validation(format!("input is not valid UTF-8: {e}"))),
        Encoding::Latin1 => Ok(bytes.iter().map(|&b| char::from(b)).collect()),
    }
}

fn parse_flag(cell: &str, column: &str) -> std::result::Result<bool, String> {
    match cell.trim() {
        "1" | "1.0" => Ok(true),
        "0" | "0.0" => Ok(false),
        other => Err(format!("column `{column}`: expected 0/1, got `{other}`")),
    }
}

fn parse_optional_flag(cell: &str, column: &str) -> std::result::Result<Option<bool>, String> {
    let t = cell.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") {
        Ok(None)
    } else {
        parse_flag(t, column).map(Some)
    }
}

fn parse_real(cell: &str, column: &str) -> std::result::Result<f64, String> {
    cell.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("column `{column}`: cannot parse `{}` as a number", cell.trim()))
}

struct Parsed {
    rows: Vec<(usize, HouseholdRow)>,
    dropped: Vec<DroppedRow>,
    rows_read: usize,
    source: String,
    hash: String,
}

fn parse_file(path: &Path, schema: &SchemaMap, opts: &SurveyOptions) -> Result<Parsed> {
    let bytes = std::fs::read(path)?;
    let hash = hex::encode(Sha256::digest(&bytes));
    let text = decode(&bytes, opts.encoding)?;
    if !opts.delimiter.is_ascii() {
        return Err(RdError::Validation("delimiter must be a single ASCII character".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter as u8)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    let column = |name: &str| -> Result<usize> {
        index
            .get(name)
            .copied()
            .ok_or_else(|| RdError::Schema { column: name.to_string() })
    };
    let required = schema
        .required()
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;
    let optional = schema
        .optional()
        .iter()
        .map(|c| c.map(column).transpose())
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut dropped = Vec::new();
    let mut rows_read = 0;
    for (k, record) in reader.records().enumerate() {
        let row = k + 1;
        rows_read += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                dropped.push(DroppedRow {
                    row,
                    household_id: None,
                    reason: format!("unparseable record: {e}"),
                });
                continue;
            }
        };
        let id = record.get(required[0]).map(|s| s.trim().to_string());
        match parse_household(&record, &required, &optional, schema, opts) {
            Ok(h) => match h.validate() {
                Ok(()) => rows.push((row, h)),
                Err(e) => dropped.push(DroppedRow {
                    row,
                    household_id: id,
                    reason: e.to_string(),
                }),
            },
            Err(reason) => dropped.push(DroppedRow {
                row,
                household_id: id,
                reason,
            }),
        }
    }
    Ok(Parsed {
        rows,
        dropped,
        rows_read,
        source: path.display().to_string(),
        hash,
    })
}

fn parse_household(
    record: &csv::StringRecord,
    required: &[usize],
    optional: &[Option<usize>],
    schema: &SchemaMap,
    opts: &SurveyOptions,
) -> std::result::Result<HouseholdRow, String> {
    let names = schema.required();
    let cell = |i: usize| -> std::result::Result<&str, String> {
        record
            .get(required[i])
            .ok_or_else(|| format!("missing cell for column `{}`", names[i]))
    };
    let age_text = cell(1)?.trim();
    let head_age = age_text
        .parse::<i32>()
        .map_err(|_| format!("column `{}`: cannot parse `{age_text}` as an age", names[1]))?;
    let sex_text = cell(2)?.trim();
    let head_sex = if sex_text == opts.sex_codes.female {
        Sex::Female
    } else if sex_text == opts.sex_codes.male {
        Sex::Male
    } else {
        return Err(format!("column `{}`: unknown sex code `{sex_text}`", names[2]));
    };
    let opt_names = schema.optional();
    let opt_flag = |j: usize| -> std::result::Result<Option<bool>, String> {
        match optional[j] {
            None => Ok(None),
            Some(idx) => parse_optional_flag(record.get(idx).unwrap_or(""), opt_names[j].unwrap_or("")),
        }
    };
    Ok(HouseholdRow {
        household_id: cell(0)?.trim().to_string(),
        head_age,
        head_sex,
        head_inactive: parse_flag(cell(3)?, names[3])?,
        pami: parse_flag(cell(4)?, names[4])?,
        any_insurance: parse_flag(cell(5)?, names[5])?,
        voluntary: parse_flag(cell(6)?, names[6])?,
        multiple: parse_flag(cell(7)?, names[7])?,
        expansion_factor: parse_real(cell(8)?, names[8])?,
        total_spend_pc: parse_real(cell(9)?, names[9])?,
        health_spend_pc: parse_real(cell(10)?, names[10])?,
        pharma: opt_flag(0)?,
        medical_services: opt_flag(1)?,
        dental: opt_flag(2)?,
        equipment: opt_flag(3)?,
    })
}

fn has_missing_flag(h: &HouseholdRow) -> bool {
    [h.pharma, h.medical_services, h.dental, h.equipment]
        .iter()
        .any(Option::is_none)
}

/// Parses and validates every household row of a delimited extract.
pub fn load_households(
    path: impl AsRef<Path>,
    schema: &SchemaMap,
    opts: &SurveyOptions,
) -> Result<(Vec<HouseholdRow>, IngestReport)> {
    let parsed = parse_file(path.as_ref(), schema, opts)?;
    let missing_flag_rows = parsed.rows.iter().filter(|(_, h)| has_missing_flag(h)).count();
    let report = IngestReport {
        source: parsed.source,
        provenance_hash: parsed.hash,
        rows_read: parsed.rows_read,
        kept: parsed.rows.len(),
        dropped: parsed.dropped,
        missing_flag_rows,
    };
    Ok((parsed.rows.into_iter().map(|(_, h)| h).collect(), report))
}

/// Builds an analysis dataset from a survey extract.
///
/// Rows missing the selected outcome (a missing consumption flag, or zero
/// health spending for `lgsalud`) are dropped and reported. Expansion
/// factors become observation weights.
pub fn load_survey(
    path: impl AsRef<Path>,
    schema: &SchemaMap,
    opts: &SurveyOptions,
) -> Result<(Dataset, IngestReport)> {
    let parsed = parse_file(path.as_ref(), schema, opts)?;
    let mut dropped = parsed.dropped;
    let mut observations = Vec::new();
    let mut missing_flag_rows = 0;
    for (row, h) in parsed.rows {
        if has_missing_flag(&h) {
            missing_flag_rows += 1;
        }
        let drop = |reason: String| DroppedRow {
            row,
            household_id: Some(h.household_id.clone()),
            reason,
        };
        let derived = match derive_indicators(&h) {
            Ok(d) => d,
            Err(e) => {
                dropped.push(drop(e.to_string()));
                continue;
            }
        };
        let Some(y) = opts.outcome.value(&h, &derived) else {
            let reason = if opts.outcome == SurveyVariable::Lgsalud {
                "zero health spending excluded from log outcome".to_string()
            } else {
                format!("missing outcome `{}`", opts.outcome)
            };
            dropped.push(drop(reason));
            continue;
        };
        let x = match opts.treatment.value(&h, &derived) {
            Some(x) if x == 0.0 || x == 1.0 => x,
            Some(x) => {
                dropped.push(drop(format!("treatment `{}` is not 0/1: {x}", opts.treatment)));
                continue;
            }
            None => {
                dropped.push(drop(format!("missing treatment `{}`", opts.treatment)));
                continue;
            }
        };
        let covariates: Option<Vec<f64>> = opts.covariates.iter().map(|c| c.value(&h, &derived)).collect();
        let Some(covariates) = covariates else {
            dropped.push(drop("missing covariate".into()));
            continue;
        };
        let z = h.z().expect("validated age");
        observations.push(Observation {
            id: h.household_id.clone(),
            z,
            y,
            x,
            covariates,
            weight: h.expansion_factor,
        });
    }
    dropped.sort_by_key(|d| d.row);
    let report = IngestReport {
        source: parsed.source,
        provenance_hash: parsed.hash,
        rows_read: parsed.rows_read,
        kept: observations.len(),
        dropped,
        missing_flag_rows,
    };
    let dataset = Dataset {
        observations,
        cutoff: 0.0,
        covariate_names: opts.covariates.iter().map(|c| c.name().to_string()).collect(),
        outcome_name: opts.outcome.name().to_string(),
        treatment_name: opts.treatment.name().to_string(),
    };
    Ok((dataset, report))
}
