//! Run configuration, read from a TOML file. See the README for the grammar.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use rdkink::ingest::{Encoding, SchemaMap, SexCodes, SurveyVariable};
use rdkink::synthetic::DgpSpec;
use rdkink::{BandwidthRule, DesignKind, DesignSpec, InferenceConfig, KernelKind};

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub survey_weights: bool,
    pub ingest: Option<IngestConfig>,
    pub estimate: Option<EstimateConfig>,
    pub simulate: Option<SimulateConfig>,
    pub plotdata: Option<PlotConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    pub input: PathBuf,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default)]
    pub encoding: Encoding,
    #[serde(default = "default_treatment")]
    pub treatment: SurveyVariable,
    pub outcomes: Vec<SurveyVariable>,
    #[serde(default)]
    pub covariates: Vec<SurveyVariable>,
    #[serde(default)]
    pub schema: SchemaMap,
    #[serde(default)]
    pub sex_codes: SexCodes,
}

fn default_delimiter() -> char {
    ','
}

fn default_treatment() -> SurveyVariable {
    SurveyVariable::Pami
}

/// Bandwidth choice shared by estimate cells and plot runs.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthMode {
    #[default]
    Auto,
    AutoPerSide,
    Fixed,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCell {
    pub outcome: String,
    pub kind: DesignKind,
    #[serde(default)]
    pub q: usize,
    pub p: usize,
    #[serde(default)]
    pub covariates: bool,
    #[serde(default)]
    pub bandwidth: BandwidthMode,
    pub h_left: Option<f64>,
    pub h_right: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    /// Directory holding `<outcome>.csv` canonical datasets; defaults to the output directory.
    pub data_dir: Option<PathBuf>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub kernel: KernelKind,
    #[serde(default)]
    pub inference: InferenceConfig,
    pub grid: Vec<GridCell>,
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    StandardSharp,
    StandardFuzzy,
    PaperMirror,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub preset: Preset,
    pub n: usize,
    pub reps: usize,
    pub kind: DesignKind,
    #[serde(default)]
    pub q: usize,
    pub p: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub kernel: KernelKind,
    #[serde(default)]
    pub inference: InferenceConfig,
    // Overrides of the preset's process.
    pub baseline: Option<Vec<f64>>,
    pub jump: Option<f64>,
    pub kink: Option<f64>,
    pub compliance_left: Option<f64>,
    pub compliance_right: Option<f64>,
    pub treatment_effect: Option<f64>,
    pub noise_sd: Option<f64>,
    pub z_range: Option<(f64, f64)>,
    pub binary_outcome: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotConfig {
    pub data_dir: Option<PathBuf>,
    pub outcomes: Vec<String>,
    #[serde(default = "default_plot_kind")]
    pub kind: DesignKind,
    #[serde(default)]
    pub q: usize,
    #[serde(default)]
    pub kernel: KernelKind,
    #[serde(default)]
    pub bandwidth: BandwidthMode,
    pub h_left: Option<f64>,
    pub h_right: Option<f64>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default)]
    pub inference: InferenceConfig,
}

fn default_plot_kind() -> DesignKind {
    DesignKind::Sharp
}

fn default_grid_points() -> usize {
    50
}

fn bandwidth_rule(mode: BandwidthMode, h_left: Option<f64>, h_right: Option<f64>) -> Result<BandwidthRule, CliError> {
    match (mode, h_left, h_right) {
        (BandwidthMode::Fixed, Some(h_left), Some(h_right)) => Ok(BandwidthRule::Fixed { h_left, h_right }),
        (BandwidthMode::Fixed, _, _) => Err(CliError::Config(
            "bandwidth = \"fixed\" needs both h_left and h_right".into(),
        )),
        (_, None, None) => Ok(match mode {
            BandwidthMode::AutoPerSide => BandwidthRule::AutoPerSide,
            _ => BandwidthRule::Auto,
        }),
        _ => Err(CliError::Config(
            "h_left/h_right are only used with bandwidth = \"fixed\"".into(),
        )),
    }
}

fn design(kind: DesignKind, q: usize, p: usize) -> DesignSpec {
    let base = match kind {
        DesignKind::Sharp => DesignSpec::sharp(p),
        DesignKind::Fuzzy => DesignSpec::fuzzy(p),
    };
    base.with_q(q)
}

impl GridCell {
    pub fn design(&self, kernel: KernelKind, alpha: f64) -> Result<DesignSpec, CliError> {
        let spec = design(self.kind, self.q, self.p)
            .with_kernel(kernel)
            .with_alpha(alpha)
            .with_covariates(self.covariates)
            .with_bandwidth_rule(bandwidth_rule(self.bandwidth, self.h_left, self.h_right)?);
        spec.validate()
            .map_err(|e| CliError::Config(format!("grid cell for `{}`: {e}", self.outcome)))?;
        Ok(spec)
    }
}

impl PlotConfig {
    pub fn design(&self, p: usize) -> Result<DesignSpec, CliError> {
        let spec = design(self.kind, self.q, p)
            .with_kernel(self.kernel)
            .with_bandwidth_rule(bandwidth_rule(self.bandwidth, self.h_left, self.h_right)?);
        spec.validate().map_err(|e| CliError::Config(format!("plotdata: {e}")))?;
        Ok(spec)
    }
}

impl SimulateConfig {
    pub fn dgp(&self, seed: u64) -> DgpSpec {
        let mut spec = match self.preset {
            Preset::StandardSharp => DgpSpec::standard_sharp(self.n, seed),
            Preset::StandardFuzzy => DgpSpec::standard_fuzzy(self.n, seed),
            Preset::PaperMirror => DgpSpec::paper_mirror(self.n, seed),
        };
        if let Some(v) = &self.baseline {
            spec.baseline = v.clone();
        }
        macro_rules! set {
            ($($field:ident),*) => {$(if let Some(v) = self.$field { spec.$field = v; })*};
        }
        set!(jump, kink, compliance_left, compliance_right, treatment_effect, noise_sd, z_range, binary_outcome);
        spec
    }

    pub fn design(&self) -> Result<DesignSpec, CliError> {
        let spec = design(self.kind, self.q, self.p).with_kernel(self.kernel).with_alpha(self.alpha);
        spec.validate().map_err(|e| CliError::Config(format!("simulate: {e}")))?;
        Ok(spec)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn section<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        section
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("configuration has no [{name}] section")))
    }
}
