use std::fmt;

use thiserror::Error;

use crate::model::Side;

/// Errors raised by estimation, ingestion and simulation.
#[derive(Debug, Error)]
pub enum RdError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("singular fit: column `{column}` is linearly dependent on earlier columns")]
    Singular { column: String },

    #[error("insufficient sample: need at least {needed} points with positive weight, found {available}")]
    SampleSize { needed: usize, available: usize },

    #[error("weak first stage: treatment jump {jump:.3e} is below the floor {floor:.3e}")]
    WeakFirstStage { jump: f64, floor: f64 },

    #[error("degenerate curvature: pilot bias term {value:.3e} is too close to zero for bandwidth selection")]
    DegenerateCurvature { value: f64 },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("{side} side: {source}")]
    Side {
        side: Side,
        #[source]
        source: Box<RdError>,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<RdError>,
    },

    #[error("schema error: required column `{column}` not found in input header")]
    Schema { column: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("too many failed replications: {failed} of {reps}")]
    TooManyFailures { failed: usize, reps: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Pipeline stage names attached to errors surfacing from [`crate::inference::run_design`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Validation,
    Bandwidth,
    Covariates,
    Estimation,
    Bias,
    Variance,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Validation => "validation",
            Stage::Bandwidth => "bandwidth selection",
            Stage::Covariates => "covariate adjustment",
            Stage::Estimation => "point estimation",
            Stage::Bias => "bias estimation",
            Stage::Variance => "variance estimation",
        };
        f.write_str(name)
    }
}

impl RdError {
    pub(crate) fn on_side(self, side: Side) -> Self {
        RdError::Side {
            side,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_stage(self, stage: Stage) -> Self {
        RdError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Strips `Side`/`Stage` annotations.
    pub fn root(&self) -> &RdError {
        match self {
            RdError::Side { source, .. } | RdError::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, RdError>;
