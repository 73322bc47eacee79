use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rdkink::ingest::{
    describe_households, load_households, load_survey, read_dataset, write_dataset, DatasetMetadata, IngestReport,
    SummaryRow, SurveyOptions,
};
use rdkink::synthetic::{run_monte_carlo, DgpSpec, McReport};
use rdkink::{
    run_design, run_design_detailed, star_label, Dataset, DesignKind, DesignSpec, EstimateResult, InferenceConfig,
    RdError, Side,
};

use crate::config::RunConfig;
use crate::table::{fixed, parenthesized, render, starred, STAR_NOTE};
use crate::CliError;

/// Settings resolved from the command line, environment and config file.
pub struct Context {
    pub config: RunConfig,
    /// Relative paths in the config file resolve against this directory.
    pub config_dir: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub survey_weights: bool,
}

impl Context {
    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.config_dir.join(p)
        }
    }

    fn data_dir(&self, configured: &Option<PathBuf>) -> PathBuf {
        configured.as_ref().map(|p| self.resolve(p)).unwrap_or_else(|| self.out.clone())
    }

    fn inference(&self, base: &InferenceConfig) -> InferenceConfig {
        InferenceConfig {
            use_survey_weights: self.survey_weights,
            ..*base
        }
    }

    fn write(&self, name: &str, contents: &[u8]) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.out)?;
        let path = self.out.join(name);
        fs::write(&path, contents)?;
        Ok(path)
    }
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| CliError::Output(e.to_string()))
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

fn dataset_file(dir: &Path, outcome: &str) -> PathBuf {
    dir.join(format!("{outcome}.csv"))
}

// ---------------------------------------------------------------- ingest

#[derive(Serialize)]
struct IngestOutput<'a> {
    households: &'a IngestReport,
    outcomes: BTreeMap<String, &'a IngestReport>,
}

pub fn ingest(ctx: &Context) -> Result<(), CliError> {
    let ic = RunConfig::section(&ctx.config.ingest, "ingest")?;
    if ic.outcomes.is_empty() {
        return Err(CliError::Config("[ingest] outcomes must not be empty".into()));
    }
    let input = ctx.resolve(&ic.input);
    let map_err = |e: RdError| match e {
        RdError::Schema { column } => CliError::Schema(column),
        RdError::Io(e) => CliError::Config(format!("cannot read {}: {e}", input.display())),
        other => CliError::Config(other.to_string()),
    };
    let base = SurveyOptions {
        delimiter: ic.delimiter,
        encoding: ic.encoding,
        outcome: ic.outcomes[0],
        treatment: ic.treatment,
        covariates: ic.covariates.clone(),
        sex_codes: ic.sex_codes.clone(),
    };
    let (households, household_report) = load_households(&input, &ic.schema, &base).map_err(map_err)?;
    let descriptives = describe_households(&households);

    let mut datasets = Vec::new();
    for &outcome in &ic.outcomes {
        let opts = SurveyOptions {
            outcome,
            ..base.clone()
        };
        let (d, report) = load_survey(&input, &ic.schema, &opts).map_err(map_err)?;
        datasets.push((outcome.name().to_string(), d, report));
    }

    fs::create_dir_all(&ctx.out)?;
    for (name, d, report) in &datasets {
        write_dataset(d, dataset_file(&ctx.out, name), &report.source, &report.provenance_hash)
            .map_err(|e| CliError::Output(e.to_string()))?;
    }
    let output = IngestOutput {
        households: &household_report,
        outcomes: datasets.iter().map(|(n, _, r)| (n.clone(), r)).collect(),
    };
    ctx.write("ingest_report.json", &json_bytes(&output)?)?;
    let mut text = format!("households: {}", household_report.summary());
    for (name, _, r) in &datasets {
        text.push_str(&format!("\noutcome {name}: {}", r.summary()));
    }
    ctx.write("ingest_report.txt", text.as_bytes())?;
    ctx.write("descriptives.csv", &csv_bytes(&descriptives)?)?;
    ctx.write("descriptives.txt", render_descriptives(&descriptives).as_bytes())?;
    Ok(())
}

fn render_descriptives(rows: &[SummaryRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let kind = match r.kind {
                rdkink::ingest::StatKind::Proportion => "PP",
                rdkink::ingest::StatKind::Mean => "mean",
            };
            vec![
                r.variable.clone(),
                r.n.to_string(),
                kind.to_string(),
                fixed(r.value, 3),
                fixed(r.sd, 3),
            ]
        })
        .collect();
    let mut s = render(&["variable", "n", "stat", "value", "DE"], &body);
    s.push_str("\nn = sample size, PP = weighted proportion, DE = weighted standard deviation\n");
    s
}

// -------------------------------------------------------------- estimate

/// One row of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub outcome: String,
    pub kind: DesignKind,
    pub q: usize,
    pub p: usize,
    pub covariates: bool,
    pub tau: Option<f64>,
    pub bias: Option<f64>,
    pub se_conventional: Option<f64>,
    pub se_robust: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub p_value: Option<f64>,
    pub stars: String,
    pub h_left: Option<f64>,
    pub h_right: Option<f64>,
    pub n_left: Option<usize>,
    pub n_right: Option<usize>,
    pub first_stage_jump: Option<f64>,
    pub error: String,
}

/// One row of `bandwidths.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthRow {
    pub outcome: String,
    pub kind: DesignKind,
    pub q: usize,
    pub p: usize,
    pub covariates: bool,
    #[serde(rename = "BWL")]
    pub bwl: Option<f64>,
    #[serde(rename = "BWR")]
    pub bwr: Option<f64>,
}

impl ResultRow {
    fn new(outcome: &str, spec: &DesignSpec, result: Result<EstimateResult, String>) -> Self {
        let mut row = ResultRow {
            outcome: outcome.to_string(),
            kind: spec.kind,
            q: spec.q,
            p: spec.p,
            covariates: spec.use_covariates,
            tau: None,
            bias: None,
            se_conventional: None,
            se_robust: None,
            ci_low: None,
            ci_high: None,
            p_value: None,
            stars: String::new(),
            h_left: None,
            h_right: None,
            n_left: None,
            n_right: None,
            first_stage_jump: None,
            error: String::new(),
        };
        match result {
            Ok(r) => {
                row.tau = Some(r.tau);
                row.bias = Some(r.bias);
                row.se_conventional = Some(r.se_conventional);
                row.se_robust = Some(r.se_robust);
                row.ci_low = Some(r.ci_low);
                row.ci_high = Some(r.ci_high);
                row.p_value = Some(r.p_value);
                row.stars = star_label(r.p_value).to_string();
                row.h_left = Some(r.h_left);
                row.h_right = Some(r.h_right);
                row.n_left = Some(r.n_left);
                row.n_right = Some(r.n_right);
                row.first_stage_jump = r.first_stage_jump;
            }
            Err(e) => row.error = e,
        }
        row
    }

    fn design_label(&self) -> &'static str {
        if self.q == 0 {
            "RDD"
        } else {
            "RKD"
        }
    }
}

fn yes_no(b: bool) -> String {
    if b { "yes" } else { "no" }.to_string()
}

fn opt(v: Option<f64>, decimals: usize) -> String {
    v.map(|v| fixed(v, decimals)).unwrap_or_default()
}

pub fn render_results(rows: &[ResultRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut cells = vec![
                r.outcome.clone(),
                r.design_label().to_string(),
                r.kind.to_string(),
                r.p.to_string(),
                yes_no(r.covariates),
            ];
            match r.tau {
                Some(tau) => cells.extend([
                    starred(tau, &r.stars),
                    r.se_robust.map(parenthesized).unwrap_or_default(),
                    format!("[{}, {}]", opt(r.ci_low, 3), opt(r.ci_high, 3)),
                    r.n_left.map(|n| n.to_string()).unwrap_or_default(),
                    r.n_right.map(|n| n.to_string()).unwrap_or_default(),
                ]),
                None => cells.push(format!("error: {}", r.error)),
            }
            cells
        })
        .collect();
    let mut s = render(
        &["outcome", "design", "kind", "p", "covariates", "estimate", "se", "95% RBC CI", "N left", "N right"],
        &body,
    );
    s.push_str(&format!(
        "\nse: robust standard error; N left/right: observations used on each side of the cutoff\n{STAR_NOTE}\n"
    ));
    s
}

pub fn render_bandwidths(rows: &[BandwidthRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.outcome.clone(),
                if r.q == 0 { "RDD" } else { "RKD" }.to_string(),
                r.kind.to_string(),
                r.p.to_string(),
                yes_no(r.covariates),
                opt(r.bwl, 3),
                opt(r.bwr, 3),
            ]
        })
        .collect();
    render(&["outcome", "design", "kind", "p", "covariates", "BWL", "BWR"], &body)
}

fn load_checked(dir: &Path, outcome: &str) -> Result<(Dataset, DatasetMetadata), CliError> {
    let path = dataset_file(dir, outcome);
    let (d, meta) = read_dataset(&path)
        .map_err(|e| CliError::Config(format!("cannot load dataset {}: {e}", path.display())))?;
    if meta.outcome_name != outcome {
        return Err(CliError::Config(format!(
            "{} holds outcome `{}`, expected `{outcome}`",
            path.display(),
            meta.outcome_name
        )));
    }
    Ok((d, meta))
}

pub fn estimate(ctx: &Context) -> Result<(), CliError> {
    let ec = RunConfig::section(&ctx.config.estimate, "estimate")?;
    if ec.grid.is_empty() {
        return Err(CliError::Config("[estimate] grid must have at least one cell".into()));
    }
    let dir = ctx.data_dir(&ec.data_dir);
    let cfg = ctx.inference(&ec.inference);
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let mut datasets: HashMap<String, Dataset> = HashMap::new();
    let mut cells = Vec::new();
    for cell in &ec.grid {
        let spec = cell.design(ec.kernel, ec.alpha)?;
        if !datasets.contains_key(&cell.outcome) {
            let (d, _) = load_checked(&dir, &cell.outcome)?;
            datasets.insert(cell.outcome.clone(), d);
        }
        if spec.use_covariates && datasets[&cell.outcome].covariate_names.is_empty() {
            return Err(CliError::Config(format!(
                "grid cell for `{}` requests covariates but the dataset has none",
                cell.outcome
            )));
        }
        cells.push((cell.outcome.clone(), spec));
    }

    let rows: Vec<ResultRow> = cells
        .iter()
        .map(|(outcome, spec)| {
            let result = run_design(&datasets[outcome], spec, &cfg).map_err(|e| e.to_string());
            ResultRow::new(outcome, spec, result)
        })
        .collect();
    let bandwidths: Vec<BandwidthRow> = rows
        .iter()
        .map(|r| BandwidthRow {
            outcome: r.outcome.clone(),
            kind: r.kind,
            q: r.q,
            p: r.p,
            covariates: r.covariates,
            bwl: r.h_left,
            bwr: r.h_right,
        })
        .collect();

    ctx.write("results.csv", &csv_bytes(&rows)?)?;
    ctx.write("results.txt", render_results(&rows).as_bytes())?;
    ctx.write("bandwidths.csv", &csv_bytes(&bandwidths)?)?;
    ctx.write("bandwidths.txt", render_bandwidths(&bandwidths).as_bytes())?;

    let failed = rows.iter().filter(|r| r.tau.is_none()).count();
    if failed > 0 {
        return Err(CliError::Partial {
            failed,
            total: rows.len(),
            what: "grid cells",
        });
    }
    Ok(())
}

// -------------------------------------------------------------- simulate

#[derive(Debug, Serialize, Deserialize)]
pub struct McOutput {
    pub dgp: DgpSpec,
    pub design: DesignSpec,
    pub report: McReport,
}

pub fn simulate(ctx: &Context) -> Result<(), CliError> {
    let sc = RunConfig::section(&ctx.config.simulate, "simulate")?;
    if sc.reps == 0 {
        return Err(CliError::Config("[simulate] reps must be at least 1".into()));
    }
    let seed = ctx.seed.or(ctx.config.seed).unwrap_or(1);
    let dgp = sc.dgp(seed);
    dgp.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let design = sc.design()?;
    dgp.truth(&design).map_err(|e| CliError::Config(e.to_string()))?;
    let cfg = ctx.inference(&sc.inference);
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let report = run_monte_carlo(&dgp, &design, &cfg, sc.reps).map_err(|e| CliError::Failed(e.to_string()))?;
    let text = render(
        &["statistic", "value"],
        &[
            vec!["replications".into(), report.replications.to_string()],
            vec!["failures".into(), report.failures.to_string()],
            vec!["truth".into(), fixed(report.truth, 4)],
            vec!["mean estimate".into(), fixed(report.mean_tau, 4)],
            vec!["bias".into(), fixed(report.bias, 4)],
            vec!["rmse".into(), fixed(report.rmse, 4)],
            vec!["coverage".into(), fixed(report.coverage, 3)],
            vec!["mean CI length".into(), fixed(report.mean_ci_length, 4)],
        ],
    );
    let output = McOutput { dgp, design, report };
    ctx.write("mc_report.json", &json_bytes(&output)?)?;
    ctx.write("mc_report.txt", text.as_bytes())?;
    Ok(())
}

// -------------------------------------------------------------- plotdata

/// One row of `plot_<outcome>.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub z: f64,
    pub value: f64,
    pub series: String,
    pub side: Side,
}

/// Means of `y` over rows sharing `floor(z)` on the same side of the cutoff.
fn bin_means(d: &Dataset, weighted: bool) -> Vec<PlotRow> {
    let mut bins: BTreeMap<(i64, u8), (f64, f64)> = BTreeMap::new();
    for o in &d.observations {
        let side = d.side_of(o.z);
        let key = (o.z.floor() as i64, matches!(side, Side::Right) as u8);
        let w = if weighted { o.weight } else { 1.0 };
        let e = bins.entry(key).or_insert((0.0, 0.0));
        e.0 += w * o.y;
        e.1 += w;
    }
    bins.into_iter()
        .filter(|(_, (_, w))| *w > 0.0)
        .map(|((z, right), (sum, w))| PlotRow {
            z: z as f64,
            value: sum / w,
            series: "bin_mean".into(),
            side: if right == 1 { Side::Right } else { Side::Left },
        })
        .collect()
}

fn curve(d: &Dataset, spec: &DesignSpec, cfg: &InferenceConfig, points: usize) -> Result<Vec<PlotRow>, RdError> {
    let run = run_design_detailed(d, spec, cfg)?;
    let (left, right) = &run.outcome_fits;
    let series = format!("fit_p{}", spec.p);
    let mut rows = Vec::with_capacity(2 * points);
    for (fit, h, sign) in [(left, run.result.h_left, -1.0), (right, run.result.h_right, 1.0)] {
        for i in 0..points {
            // Left grid runs -h ..= 0, right grid 0 ..= h; both include the cutoff limit.
            let t = i as f64 / (points - 1) as f64;
            let dz = if sign < 0.0 { -h * (1.0 - t) } else { h * t };
            rows.push(PlotRow {
                z: d.cutoff + dz,
                value: fit.evaluate(dz),
                series: series.clone(),
                side: fit.side,
            });
        }
    }
    Ok(rows)
}

pub fn plotdata(ctx: &Context) -> Result<(), CliError> {
    let pc = RunConfig::section(&ctx.config.plotdata, "plotdata")?;
    if pc.outcomes.is_empty() {
        return Err(CliError::Config("[plotdata] outcomes must not be empty".into()));
    }
    if pc.grid_points < 2 {
        return Err(CliError::Config("[plotdata] grid_points must be at least 2".into()));
    }
    let specs = [pc.design(1)?, pc.design(2)?];
    let cfg = ctx.inference(&pc.inference);
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let dir = ctx.data_dir(&pc.data_dir);

    let mut files = Vec::new();
    let mut errors = Vec::new();
    for outcome in &pc.outcomes {
        let (d, _) = load_checked(&dir, outcome)?;
        let mut rows = bin_means(&d, ctx.survey_weights);
        for spec in &specs {
            match curve(&d, spec, &cfg, pc.grid_points) {
                Ok(c) => rows.extend(c),
                Err(e) => errors.push(format!("{outcome} p={}: {e}", spec.p)),
            }
        }
        files.push((format!("plot_{outcome}.csv"), csv_bytes(&rows)?));
    }
    for (name, bytes) in &files {
        ctx.write(name, bytes)?;
    }
    if !errors.is_empty() {
        for e in &errors {
            eprintln!("plotdata: {e}");
        }
        return Err(CliError::Partial {
            failed: errors.len(),
            total: 2 * pc.outcomes.len(),
            what: "fitted curves",
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rdkink::Observation;

    #[test]
    fn bins_are_weighted_and_split_at_cutoff() {
        let d = Dataset::from_observations(vec![
            Observation::new(-1.0, 1.0, 0.0).with_weight(1.0),
            Observation::new(-0.5, 4.0, 0.0).with_weight(3.0),
            Observation::new(0.0, 2.0, 1.0).with_weight(1.0),
            Observation::new(0.5, 6.0, 1.0).with_weight(1.0),
            Observation::new(2.0, 5.0, 1.0).with_weight(2.0),
        ]);
        let weighted = bin_means(&d, true);
        let got: Vec<(f64, f64)> = weighted.iter().map(|r| (r.z, r.value)).collect();
        assert_eq!(got, [(-1.0, 13.0 / 4.0), (0.0, 4.0), (2.0, 5.0)]);
        let plain = bin_means(&d, false);
        assert_eq!(plain[0].value, 2.5);
        assert_eq!(plain[0].side, Side::Left);
        assert_eq!(plain[1].side, Side::Right);
    }

    #[test]
    fn result_rows_round_trip_through_csv() {
        let spec = DesignSpec::fuzzy(2);
        let ok = ResultRow::new(
            "y",
            &spec,
            Ok(EstimateResult {
                tau: 0.1 + 0.2,
                bias: -1e-17,
                se_conventional: 1.0 / 3.0,
                se_robust: 0.4,
                ci_low: -0.5,
                ci_high: 1.1,
                p_value: 0.0005,
                h_left: 5.5,
                h_right: 6.25,
                n_left: 10,
                n_right: 12,
                first_stage_jump: Some(0.14),
            }),
        );
        let bad = ResultRow::new("y", &spec, Err("point estimation: weak, first stage".into()));
        assert_eq!(ok.stars, "***");
        let bytes = csv_bytes(&[ok.clone(), bad.clone()]).unwrap();
        let back: Vec<ResultRow> = csv::Reader::from_reader(bytes.as_slice())
            .deserialize()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(back, [ok, bad]);
    }
}
