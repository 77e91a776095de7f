//! CSV ingestion and result serialization.

mod report;
mod svg;

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::basis::Dataset;
use crate::error::{Error, Result};

pub use report::{
    format_probability, timestamp_now, write_report, CoefficientPath, DataSummary, NamedStep,
    PathPoint, ProbabilityRow, Report, ReportKind, RunMetadata, SelectionSummary,
};
pub use svg::{selection_svg, Panel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    #[default]
    Continuous,
    /// Must hold 0 or 1; enters the model as a single-cut numeric column.
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Decimal {
    #[default]
    Dot,
    Comma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorColumn {
    pub name: String,
    #[serde(default)]
    pub kind: PredictorKind,
}

/// Layout of an input CSV file. An empty predictor list means "every column
/// except the outcome, all continuous".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub outcome: String,
    pub predictors: Vec<PredictorColumn>,
    pub delimiter: char,
    pub decimal: Decimal,
    /// Label → class map for non-numeric outcome columns.
    pub outcome_map: Option<BTreeMap<String, u8>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            outcome: "outcome".into(),
            predictors: Vec::new(),
            delimiter: ',',
            decimal: Decimal::Dot,
            outcome_map: None,
        }
    }
}

/// Complete blood count columns: red cell indices, platelets, leukocyte
/// differential in counts and percentages, analyzer alarm, sex and age.
pub const CBC_COLUMNS: [(&str, PredictorKind); 22] = [
    ("Hg", PredictorKind::Continuous),
    ("Ht", PredictorKind::Continuous),
    ("MCHC", PredictorKind::Continuous),
    ("MCV", PredictorKind::Continuous),
    ("Er", PredictorKind::Continuous),
    ("P", PredictorKind::Continuous),
    ("RDW-CV", PredictorKind::Continuous),
    ("Le", PredictorKind::Continuous),
    ("IG", PredictorKind::Continuous),
    ("N", PredictorKind::Continuous),
    ("B", PredictorKind::Continuous),
    ("Eo", PredictorKind::Continuous),
    ("M", PredictorKind::Continuous),
    ("Ly", PredictorKind::Continuous),
    ("N%", PredictorKind::Continuous),
    ("B%", PredictorKind::Continuous),
    ("Eo%", PredictorKind::Continuous),
    ("M%", PredictorKind::Continuous),
    ("Ly%", PredictorKind::Continuous),
    ("alarm", PredictorKind::Binary),
    ("sex", PredictorKind::Binary),
    ("age", PredictorKind::Continuous),
];

impl CsvSchema {
    pub fn cbc_default() -> Self {
        CsvSchema {
            outcome: "smear".into(),
            predictors: CBC_COLUMNS
                .iter()
                .map(|&(name, kind)| PredictorColumn {
                    name: name.into(),
                    kind,
                })
                .collect(),
            outcome_map: Some(BTreeMap::from([
                ("normal".to_string(), 0),
                ("abnormal".to_string(), 1),
            ])),
            ..CsvSchema::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.outcome.is_empty() {
            return Err(Error::Config("schema needs an outcome column".into()));
        }
        if !self.delimiter.is_ascii() || self.delimiter == '"' || self.delimiter == '\n' {
            return Err(Error::Config(format!(
                "unsupported delimiter {:?}",
                self.delimiter
            )));
        }
        if self.decimal == Decimal::Comma && self.delimiter == ',' {
            return Err(Error::Config(
                "decimal comma requires a delimiter other than ','".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for p in &self.predictors {
            if p.name == self.outcome {
                return Err(Error::Config(format!(
                    "`{}` is both outcome and predictor",
                    p.name
                )));
            }
            if !seen.insert(&p.name) {
                return Err(Error::Config(format!("predictor `{}` listed twice", p.name)));
            }
        }
        if let Some(map) = &self.outcome_map {
            if map.values().any(|&v| v > 1) {
                return Err(Error::Config("outcome map values must be 0 or 1".into()));
            }
        }
        Ok(())
    }

    fn parse_number(&self, cell: &str) -> Option<f64> {
        let cell = cell.trim();
        let v: f64 = match self.decimal {
            Decimal::Dot => cell.parse().ok()?,
            Decimal::Comma => cell.replace(',', ".").parse().ok()?,
        };
        v.is_finite().then_some(v)
    }

    fn format_number(&self, v: f64) -> String {
        let s = v.to_string();
        match self.decimal {
            Decimal::Dot => s,
            Decimal::Comma => s.replace('.', ","),
        }
    }
}

/// A dataset plus what listwise deletion removed.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub rows_read: usize,
    /// File line numbers of the dropped rows.
    pub dropped_lines: Vec<u64>,
}

impl LoadedDataset {
    pub fn dropped(&self) -> usize {
        self.dropped_lines.len()
    }
}

enum Outcome {
    Class(u8),
    Missing,
    Invalid,
}

fn coerce_outcome(schema: &CsvSchema, cell: &str) -> Outcome {
    let cell = cell.trim();
    if cell.is_empty() {
        return Outcome::Missing;
    }
    if let Some(map) = &schema.outcome_map {
        if let Some(&v) = map.get(cell) {
            return Outcome::Class(v);
        }
    }
    match schema.parse_number(cell) {
        Some(v) if v == 0.0 => Outcome::Class(0),
        Some(v) if v == 1.0 => Outcome::Class(1),
        _ => Outcome::Invalid,
    }
}

/// Reads a delimited file. Rows with a missing or unparseable predictor cell,
/// or a missing outcome, are dropped and counted; an outcome that is present
/// but not coercible to 0/1 is an error listing the offending lines.
pub fn read_dataset(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<LoadedDataset> {
    let path = path.as_ref();
    schema.validate()?;
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .flexible(true)
        .trim(csv::Trim::Headers)
        .from_reader(file);
    let headers = reader.headers().map_err(csv_err)?.clone();

    let find = |name: &str| -> Result<usize> {
        let hits: Vec<usize> = headers
            .iter()
            .enumerate()
            .filter(|(_, h)| *h == name)
            .map(|(i, _)| i)
            .collect();
        match hits.as_slice() {
            [i] => Ok(*i),
            [] => Err(Error::InvalidData(format!(
                "column `{name}` not found in {}",
                path.display()
            ))),
            _ => Err(Error::InvalidData(format!(
                "column `{name}` appears more than once in {}",
                path.display()
            ))),
        }
    };
    let outcome_col = find(&schema.outcome).map_err(|e| match e {
        Error::InvalidData(m) if m.contains("not found") => {
            Error::MissingOutcomeColumn(schema.outcome.clone())
        }
        other => other,
    })?;
    let predictors: Vec<PredictorColumn> = if schema.predictors.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != outcome_col)
            .map(|(_, h)| PredictorColumn {
                name: h.to_string(),
                kind: PredictorKind::Continuous,
            })
            .collect()
    } else {
        schema.predictors.clone()
    };
    if predictors.is_empty() {
        return Err(Error::InvalidData(format!(
            "{} has no predictor columns",
            path.display()
        )));
    }
    let cols = predictors
        .iter()
        .map(|p| find(&p.name))
        .collect::<Result<Vec<_>>>()?;

    let mut values = Vec::new();
    let mut outcome = Vec::new();
    let mut dropped_lines = Vec::new();
    let mut invalid_lines = Vec::new();
    let mut rows_read = 0;
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        rows_read += 1;
        let line = record.position().map_or(0, |p| p.line());
        let y = match coerce_outcome(schema, record.get(outcome_col).unwrap_or("")) {
            Outcome::Class(v) => v,
            Outcome::Missing => {
                dropped_lines.push(line);
                continue;
            }
            Outcome::Invalid => {
                invalid_lines.push(line as usize);
                continue;
            }
        };
        let row: Option<Vec<f64>> = predictors
            .iter()
            .zip(&cols)
            .map(|(p, &c)| {
                let v = schema.parse_number(record.get(c)?)?;
                match p.kind {
                    PredictorKind::Binary if v != 0.0 && v != 1.0 => None,
                    _ => Some(v),
                }
            })
            .collect();
        match row {
            Some(row) => {
                values.extend(row);
                outcome.push(y);
            }
            None => dropped_lines.push(line),
        }
    }
    if !invalid_lines.is_empty() {
        return Err(Error::InvalidOutcome {
            rows: invalid_lines,
        });
    }
    if outcome.is_empty() {
        return Err(Error::NoUsableRows(path.to_path_buf()));
    }
    if !dropped_lines.is_empty() {
        log::warn!(
            "{}: dropped {} of {rows_read} rows with missing or unparseable cells",
            path.display(),
            dropped_lines.len()
        );
    }
    let features = Array2::from_shape_vec((outcome.len(), predictors.len()), values)
        .expect("row-major buffer matches shape");
    let names = predictors.into_iter().map(|p| p.name).collect();
    Ok(LoadedDataset {
        dataset: Dataset::new(features, outcome, names)?,
        rows_read,
        dropped_lines,
    })
}

/// Writes `data` so that [`read_dataset`] with the same schema reads it back
/// exactly. Predictors come first in dataset order, the outcome last.
pub fn write_dataset(path: impl AsRef<Path>, data: &Dataset, schema: &CsvSchema) -> Result<()> {
    let path = path.as_ref();
    schema.validate()?;
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .delimiter(schema.delimiter as u8)
        .from_writer(file);
    let mut header: Vec<&str> = data.names().iter().map(String::as_str).collect();
    header.push(&schema.outcome);
    w.write_record(&header).map_err(csv_err)?;

    let label = |y: u8| -> String {
        schema
            .outcome_map
            .as_ref()
            .and_then(|m| m.iter().find(|(_, &v)| v == y).map(|(k, _)| k.clone()))
            .unwrap_or_else(|| y.to_string())
    };
    for (row, &y) in data.features().rows().into_iter().zip(data.outcome()) {
        let mut rec: Vec<String> = row.iter().map(|&v| schema.format_number(v)).collect();
        rec.push(label(y));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
