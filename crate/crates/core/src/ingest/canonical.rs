//! Canonical dataset files: `id,z,y,x,<covariates...>,weight` plus a JSON
//! sidecar (`<stem>.meta.json`) carrying names, cutoff and provenance.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{RdError, Result};
use crate::model::{Dataset, Observation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub outcome_name: String,
    pub treatment_name: String,
    pub covariate_names: Vec<String>,
    pub cutoff: f64,
    pub n_rows: usize,
    pub source: String,
    /// SHA-256 of the raw input file.
    pub provenance_hash: String,
}

/// Sidecar path for a dataset file: `data.csv` -> `data.meta.json`.
pub fn metadata_path(dataset_path: &Path) -> PathBuf {
    dataset_path.with_extension("meta.json")
}

fn header(d: &Dataset) -> Vec<String> {
    let mut h = vec!["id".to_string(), "z".into(), "y".into(), "x".into()];
    h.extend(d.covariate_names.iter().cloned());
    h.push("weight".into());
    h
}

/// Writes the dataset and its sidecar. Reals are written at full precision.
pub fn write_dataset(d: &Dataset, path: impl AsRef<Path>, source: &str, provenance_hash: &str) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(header(d))?;
    for obs in &d.observations {
        let mut rec = vec![obs.id.clone(), obs.z.to_string(), obs.y.to_string(), obs.x.to_string()];
        rec.extend(obs.covariates.iter().map(f64::to_string));
        rec.push(obs.weight.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;

    let meta = DatasetMetadata {
        outcome_name: d.outcome_name.clone(),
        treatment_name: d.treatment_name.clone(),
        covariate_names: d.covariate_names.clone(),
        cutoff: d.cutoff,
        n_rows: d.len(),
        source: source.to_string(),
        provenance_hash: provenance_hash.to_string(),
    };
    let mut f = BufWriter::new(File::create(metadata_path(path))?);
    serde_json::to_writer_pretty(&mut f, &meta)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<(Dataset, DatasetMetadata)> {
    let path = path.as_ref();
    let meta: DatasetMetadata = serde_json::from_reader(File::open(metadata_path(path))?)?;
    let mut reader = csv::Reader::from_path(path)?;
    let expected = {
        let mut h = vec!["id".to_string(), "z".into(), "y".into(), "x".into()];
        h.extend(meta.covariate_names.iter().cloned());
        h.push("weight".into());
        h
    };
    let found: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if found != expected {
        return Err(RdError::Validation(format!(
            "dataset header {found:?} does not match metadata {expected:?}"
        )));
    }
    let arity = meta.covariate_names.len();
    let mut observations = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let num = |j: usize| -> Result<f64> {
            rec[j].parse::<f64>().map_err(|_| {
                RdError::Validation(format!("row {}: column `{}` is not a number", i + 1, expected[j]))
            })
        };
        observations.push(Observation {
            id: rec[0].to_string(),
            z: num(1)?,
            y: num(2)?,
            x: num(3)?,
            covariates: (0..arity).map(|j| num(4 + j)).collect::<Result<_>>()?,
            weight: num(4 + arity)?,
        });
    }
    if observations.len() != meta.n_rows {
        return Err(RdError::Validation(format!(
            "metadata declares {} rows, file has {}",
            meta.n_rows,
            observations.len()
        )));
    }
    let d = Dataset {
        observations,
        cutoff: meta.cutoff,
        covariate_names: meta.covariate_names.clone(),
        outcome_name: meta.outcome_name.clone(),
        treatment_name: meta.treatment_name.clone(),
    };
    Ok((d, meta))
}
