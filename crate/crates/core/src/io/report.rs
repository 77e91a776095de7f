use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::svg::{selection_svg, Panel};
use crate::basis::{CutpointGrid, StepFunction};
use crate::error::{Error, Result};
use crate::simulate::ScenarioResult;
use crate::solver::WeightSpec;
use crate::stability::{Recommendation, StabilityResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Fit,
    Stability,
    Simulate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetadata {
    pub tool: String,
    pub version: String,
    /// Fully resolved configuration, defaults included.
    pub config: serde_json::Value,
    /// SHA-256 of the compact JSON encoding of `config`.
    pub config_hash: String,
    pub seed: u64,
    pub started: String,
    pub finished: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataSummary {
    pub input: String,
    pub rows_read: usize,
    pub rows_used: usize,
    pub rows_dropped: usize,
    pub negatives: usize,
    pub positives: usize,
    pub predictors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbabilityRow {
    pub predictor: String,
    pub cutpoint_index: usize,
    pub cutpoint: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionSummary {
    pub subsamples: usize,
    pub successful_fits: usize,
    pub failed_fits: usize,
    pub threshold: f64,
    pub probabilities: Vec<ProbabilityRow>,
    pub nonzero_counts: Vec<Option<usize>>,
}

impl SelectionSummary {
    pub fn new(res: &StabilityResult, grid: &CutpointGrid, threshold: f64) -> Self {
        SelectionSummary {
            subsamples: res.config.subsamples,
            successful_fits: res.successful,
            failed_fits: res.failed,
            threshold,
            probabilities: res
                .columns
                .iter()
                .zip(&res.probabilities)
                .map(|(c, &p)| ProbabilityRow {
                    predictor: grid.predictors()[c.predictor].name.clone(),
                    cutpoint_index: c.index,
                    cutpoint: c.cutpoint,
                    probability: p,
                })
                .collect(),
            nonzero_counts: res.nonzero_counts.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedStep {
    pub predictor: String,
    #[serde(flatten)]
    pub function: StepFunction,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathPoint {
    pub lambda: f64,
    pub intercept: f64,
    /// `(column, coefficient)` for the nonzero coefficients.
    pub coefficients: Vec<(usize, f64)>,
    pub objective: f64,
    pub kkt_violation: f64,
    pub iterations: usize,
    pub ebic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientPath {
    pub lambda_max: f64,
    pub points: Vec<PathPoint>,
    /// Path point whose step functions are reported.
    pub selected: usize,
}

/// Everything one run writes. Sections a command does not produce stay `None`
/// and their files are not written.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub kind: ReportKind,
    pub metadata: RunMetadata,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<CutpointGrid>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cutoffs: Option<Vec<Recommendation>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<CoefficientPath>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_functions: Option<Vec<NamedStep>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioResult>,
}

impl Report {
    pub fn new(kind: ReportKind, metadata: RunMetadata) -> Self {
        Report {
            kind,
            metadata,
            data: None,
            weights: None,
            grid: None,
            selection: None,
            cutoffs: None,
            path: None,
            step_functions: None,
            scenario: None,
        }
    }
}

/// Current UTC time, RFC 3339, whole seconds.
pub fn timestamp_now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Probability with 9 significant digits, shortest form.
pub fn format_probability(p: f64) -> String {
    let rounded: f64 = format!("{p:.8e}").parse().expect("formatted float parses");
    rounded.to_string()
}

struct Csv {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl Csv {
    fn create(path: PathBuf, header: &[&str]) -> Result<Self> {
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut csv = Csv {
            writer: csv::Writer::from_writer(file),
            path,
        };
        csv.row(header)?;
        Ok(csv)
    }

    fn row<S: AsRef<[u8]>>(&mut self, fields: &[S]) -> Result<()> {
        self.writer.write_record(fields).map_err(|source| Error::Csv {
            path: self.path.clone(),
            source,
        })
    }

    fn finish(mut self) -> Result<PathBuf> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(self.path)
    }
}

fn write_text(path: PathBuf, text: &str) -> Result<PathBuf> {
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes the report files into `out_dir` (created if needed) and returns
/// their paths in writing order.
pub fn write_report(report: &Report, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    if let Some(sel) = &report.selection {
        let mut csv = Csv::create(
            dir.join("selection_probabilities.csv"),
            &["predictor", "cutpoint", "probability"],
        )?;
        for r in &sel.probabilities {
            csv.row(&[
                r.predictor.clone(),
                r.cutpoint.to_string(),
                format_probability(r.probability),
            ])?;
        }
        written.push(csv.finish()?);

        let mut csv = Csv::create(
            dir.join("cutoffs.csv"),
            &["predictor", "cutpoint", "probability", "merged", "members"],
        )?;
        for r in report.cutoffs.iter().flatten() {
            let members: Vec<String> = r.members.iter().map(f64::to_string).collect();
            csv.row(&[
                r.name.clone(),
                r.cutpoint.to_string(),
                format_probability(r.probability),
                r.merged.to_string(),
                members.join(";"),
            ])?;
        }
        written.push(csv.finish()?);

        if let Some(grid) = &report.grid {
            let panels = Panel::from_rows(grid, &sel.probabilities, &[]);
            let svg = selection_svg("Selection probability", &panels, sel.threshold);
            written.push(write_text(dir.join("selection_probabilities.svg"), &svg)?);
        }
    }

    if let (Some(path), Some(grid)) = (&report.path, &report.grid) {
        let keys = grid.column_keys();
        let mut csv = Csv::create(
            dir.join("coefficient_path.csv"),
            &["lambda", "predictor", "cutpoint", "coefficient"],
        )?;
        for pt in &path.points {
            csv.row(&[
                pt.lambda.to_string(),
                "(intercept)".into(),
                String::new(),
                pt.intercept.to_string(),
            ])?;
            for &(c, b) in &pt.coefficients {
                let k = &keys[c];
                csv.row(&[
                    pt.lambda.to_string(),
                    grid.predictors()[k.predictor].name.clone(),
                    k.cutpoint.to_string(),
                    b.to_string(),
                ])?;
            }
        }
        written.push(csv.finish()?);
    }

    if let Some(sc) = &report.scenario {
        let mut csv = Csv::create(
            dir.join("mean_probabilities.csv"),
            &["predictor", "cutpoint", "probability"],
        )?;
        let rows: Vec<ProbabilityRow> = sc
            .columns
            .iter()
            .zip(&sc.mean_probabilities)
            .map(|(c, &p)| ProbabilityRow {
                predictor: sc.names[c.predictor].clone(),
                cutpoint_index: c.index,
                cutpoint: c.cutpoint,
                probability: p,
            })
            .collect();
        for r in &rows {
            csv.row(&[
                r.predictor.clone(),
                r.cutpoint.to_string(),
                format_probability(r.probability),
            ])?;
        }
        written.push(csv.finish()?);

        let mut csv = Csv::create(
            dir.join("detection.csv"),
            &[
                "predictor",
                "percentile",
                "effect",
                "cutoff",
                "grid_cutpoint",
                "detection_rate",
                "nonzero_rate",
                "mean_probability",
            ],
        )?;
        for t in &sc.truths {
            csv.row(&[
                t.predictor.clone(),
                t.percentile.to_string(),
                t.effect.to_string(),
                t.cutoff.to_string(),
                sc.columns[t.column].cutpoint.to_string(),
                format_probability(t.detection_rate),
                format_probability(t.nonzero_rate),
                format_probability(t.mean_probability),
            ])?;
        }
        written.push(csv.finish()?);

        let grid = scenario_grid(sc);
        let marks: Vec<(usize, f64)> = sc
            .truths
            .iter()
            .map(|t| (sc.columns[t.column].predictor, t.cutoff))
            .collect();
        let threshold = report
            .metadata
            .config
            .pointer("/stability/threshold")
            .and_then(serde_json::Value::as_f64)
            .unwrap_or(0.75);
        let panels = Panel::from_rows(&grid, &rows, &marks);
        let title = format!("Scenario {}: mean selection probability", sc.id);
        let svg = selection_svg(&title, &panels, threshold);
        written.push(write_text(dir.join("mean_probabilities.svg"), &svg)?);
    }

    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    written.push(write_text(dir.join("report.json"), &json)?);
    Ok(written)
}

fn scenario_grid(sc: &ScenarioResult) -> CutpointGrid {
    use crate::basis::{GridStrategy, PredictorGrid};
    let predictors = sc
        .names
        .iter()
        .enumerate()
        .map(|(j, name)| PredictorGrid {
            name: name.clone(),
            cutpoints: sc
                .columns
                .iter()
                .filter(|c| c.predictor == j)
                .map(|c| c.cutpoint)
                .collect(),
            strategy: GridStrategy::Percentile,
        })
        .collect();
    CutpointGrid::new(predictors).expect("grid taken from a valid design")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probability_formatting() {
        assert_eq!(format_probability(0.37), "0.37");
        assert_eq!(format_probability(1.0), "1");
        assert_eq!(format_probability(0.0), "0");
        assert_eq!(format_probability(1.0 / 3.0), "0.333333333");
        assert_eq!(format_probability(2.0 / 3.0), "0.666666667");
    }
}
