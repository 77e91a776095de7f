//! Command-line front end: `fit`, `stability` and `simulate`.
//!
//! Settings come from an optional TOML file, then command-line flags, which
//! win. The fully resolved configuration (every default filled in, seed
//! included) is written into `report.json`, so a run can be repeated from its
//! own report.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::{expand, fitted_function, CutpointGrid, GridSpec};
use crate::error::{Error, ErrorKind, Result};
use crate::io::{
    read_dataset, timestamp_now, write_report, CoefficientPath, CsvSchema, DataSummary,
    LoadedDataset, NamedStep, PathPoint, Report, ReportKind, RunMetadata, SelectionSummary,
};
use crate::simulate::{run_scenario, FeatureModel, ScenarioSpec};
use crate::solver::{fit_path, lambda_max, weighted_nll, FitOptions, PathSpec, WeightRule};
use crate::stability::{ebic, select_cutoffs, stability_selection, LambdaRule, StabilityConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Config => EXIT_CONFIG,
        ErrorKind::Data => EXIT_DATA,
        ErrorKind::Numerical => EXIT_NUMERICAL,
    }
}

#[derive(Debug, Parser)]
#[command(name = "cutpoint-select", version, about = "Find predictor cutoffs associated with a binary outcome")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Fit the lasso path and report coefficient paths and step functions.
    Fit,
    /// Estimate selection probabilities and recommend cutoffs.
    Stability,
    /// Run a simulation scenario and report recovery of the true cutoffs.
    Simulate,
}

#[derive(Debug, Default, Args)]
pub struct Flags {
    /// Input CSV file.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "CUTPOINT_SELECT_WORKERS")]
    pub workers: Option<usize>,
    /// Explicit weight on outcome-1 rows (default: n0/n1).
    #[arg(long, global = true)]
    pub omega: Option<f64>,
    /// Selection-probability threshold for recommended cutoffs.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Number of stability subsamples.
    #[arg(long, global = true)]
    pub subsamples: Option<usize>,
    /// Scenario id: A, B, C, D or null.
    #[arg(long, global = true)]
    pub scenario: Option<String>,
    #[arg(long, global = true)]
    pub replications: Option<usize>,
    /// Fixed report timestamp, for byte-reproducible output.
    #[arg(long, global = true)]
    pub timestamp: Option<String>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub path: PathSpec,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Extended-BIC γ used to pick the path point whose step functions are reported.
    pub ebic_gamma: f64,
}

impl Default for FitSection {
    fn default() -> Self {
        let o = FitOptions::default();
        FitSection {
            path: PathSpec::default(),
            tolerance: o.tolerance,
            max_iterations: o.max_iterations,
            ebic_gamma: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySection {
    pub subsamples: usize,
    pub fraction: f64,
    pub threshold: f64,
    pub lambda_rule: LambdaRule,
}

impl Default for StabilitySection {
    fn default() -> Self {
        let c = StabilityConfig::default();
        StabilitySection {
            subsamples: c.subsamples,
            fraction: c.fraction,
            threshold: c.threshold,
            lambda_rule: c.lambda_rule,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    /// Preset id used when `spec` is absent.
    pub scenario: String,
    pub replications: Option<usize>,
    pub n: Option<usize>,
    /// A complete custom scenario; overrides the preset.
    pub spec: Option<ScenarioSpec>,
    /// Feature model; the built-in CBC-like model when absent.
    pub feature_model: Option<FeatureModel>,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            scenario: "B".into(),
            replications: None,
            n: None,
            spec: None,
            feature_model: None,
        }
    }
}

/// Everything one invocation needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub input: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub timestamp: Option<String>,
    pub verbosity: u8,
    pub schema: CsvSchema,
    pub grid: GridSpec,
    pub weights: WeightRule,
    pub fit: FitSection,
    pub stability: StabilitySection,
    pub simulation: SimulationSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: None,
            input: None,
            out: PathBuf::from("out"),
            seed: None,
            workers: None,
            timestamp: None,
            verbosity: 0,
            schema: CsvSchema::default(),
            grid: GridSpec::default(),
            weights: WeightRule::default(),
            fit: FitSection::default(),
            stability: StabilitySection::default(),
            simulation: SimulationSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies flag overrides and materializes every default, including the
    /// seed, the worker count and the scenario spec.
    pub fn resolve(mut self, command: Command, flags: &Flags) -> Result<Self> {
        self.command = Some(command);
        if let Some(v) = &flags.input {
            self.input = Some(v.clone());
        }
        if let Some(v) = &flags.out {
            self.out = v.clone();
        }
        if flags.seed.is_some() {
            self.seed = flags.seed;
        }
        if flags.workers.is_some() {
            self.workers = flags.workers;
        }
        if flags.timestamp.is_some() {
            self.timestamp = flags.timestamp.clone();
        }
        if let Some(omega) = flags.omega {
            self.weights = WeightRule::Explicit { omega };
        }
        if let Some(t) = flags.threshold {
            self.stability.threshold = t;
        }
        if let Some(b) = flags.subsamples {
            self.stability.subsamples = b;
        }
        if let Some(s) = &flags.scenario {
            self.simulation.scenario = s.clone();
            self.simulation.spec = None;
        }
        if flags.replications.is_some() {
            self.simulation.replications = flags.replications;
        }
        self.verbosity = self.verbosity.max(flags.verbose);

        if self.seed.is_none() {
            let seed = rand::random::<u64>();
            log::warn!("no seed given; using generated seed {seed}");
            self.seed = Some(seed);
        }
        let workers = match self.workers {
            Some(0) => return Err(Error::Config("workers must be at least 1".into())),
            Some(w) => w,
            None => std::thread::available_parallelism().map_or(1, usize::from),
        };
        self.workers = Some(workers);

        self.schema.validate()?;
        if let WeightRule::Explicit { omega } = self.weights {
            crate::solver::WeightSpec::explicit(omega)?;
        }
        self.stability_config().validate()?;
        match command {
            Command::Fit => {
                self.fit_options();
                if self.fit.path.count < 2 || !(self.fit.path.ratio > 0.0 && self.fit.path.ratio < 1.0) {
                    return Err(Error::Config("path needs count ≥ 2 and ratio in (0, 1)".into()));
                }
            }
            Command::Stability => {}
            Command::Simulate => {
                let mut spec = match &self.simulation.spec {
                    Some(s) => s.clone(),
                    None => ScenarioSpec::preset(&self.simulation.scenario)?,
                };
                if let Some(r) = self.simulation.replications {
                    spec.replications = r;
                }
                if let Some(n) = self.simulation.n {
                    spec.n = n;
                }
                let model = self.feature_model();
                spec.validate(&model)?;
                self.simulation.replications = Some(spec.replications);
                self.simulation.n = Some(spec.n);
                self.simulation.spec = Some(spec);
            }
        }
        Ok(self)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or_default()
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            tolerance: self.fit.tolerance,
            max_iterations: self.fit.max_iterations,
            ..FitOptions::default()
        }
    }

    pub fn stability_config(&self) -> StabilityConfig {
        StabilityConfig {
            subsamples: self.stability.subsamples,
            fraction: self.stability.fraction,
            lambda_rule: self.stability.lambda_rule.clone(),
            threshold: self.stability.threshold,
            seed: self.seed(),
        }
    }

    pub fn feature_model(&self) -> FeatureModel {
        self.simulation
            .feature_model
            .clone()
            .unwrap_or_else(FeatureModel::cbc_default)
    }

    /// Hex SHA-256 of the compact JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn metadata(cfg: &RunConfig, started: String) -> RunMetadata {
    RunMetadata {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: serde_json::to_value(cfg).expect("config serializes"),
        config_hash: cfg.hash(),
        seed: cfg.seed(),
        finished: cfg.timestamp.clone().unwrap_or_else(timestamp_now),
        started,
    }
}

fn load(cfg: &RunConfig) -> Result<(LoadedDataset, DataSummary)> {
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("no input file given (--input)".into()))?;
    let loaded = read_dataset(input, &cfg.schema)?;
    let (n0, n1) = loaded.dataset.class_counts();
    let summary = DataSummary {
        input: input.display().to_string(),
        rows_read: loaded.rows_read,
        rows_used: loaded.dataset.n(),
        rows_dropped: loaded.dropped(),
        negatives: n0,
        positives: n1,
        predictors: loaded.dataset.names().to_vec(),
    };
    Ok((loaded, summary))
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<Report> {
    let started = cfg.timestamp.clone().unwrap_or_else(timestamp_now);
    let (loaded, summary) = load(cfg)?;
    let data = &loaded.dataset;
    let y = data.outcome();
    let w = cfg.weights.resolve(y)?;
    let grid = CutpointGrid::build(data, &cfg.grid)?;
    let design = expand(data, &grid)?;
    let lmax = lambda_max(&design, y, &w)?;
    let path = fit_path(&design, y, &w, &cfg.fit.path, &cfg.fit_options())?;

    let points: Vec<PathPoint> = path
        .fits
        .iter()
        .map(|f| {
            let nll = weighted_nll(&design, y, &w, f.intercept, &f.coefficients);
            PathPoint {
                lambda: f.lambda,
                intercept: f.intercept,
                coefficients: f.selected().map(|c| (c, f.coefficients[c])).collect(),
                objective: f.objective,
                kkt_violation: f.kkt_violation,
                iterations: f.iterations,
                ebic: ebic(nll, f.nonzero_count(), data.n(), design.n_cols(), cfg.fit.ebic_gamma),
            }
        })
        .collect();
    let selected = points
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.ebic.total_cmp(&b.1.ebic))
        .map_or(0, |(i, _)| i);
    let best = &path.fits[selected];
    let step_functions = (0..grid.len())
        .map(|j| {
            Ok(NamedStep {
                predictor: grid.predictors()[j].name.clone(),
                function: fitted_function(&best.coefficients, &grid, j)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = Report::new(ReportKind::Fit, metadata(cfg, started));
    report.data = Some(summary);
    report.weights = Some(w);
    report.grid = Some(grid);
    report.path = Some(CoefficientPath {
        lambda_max: lmax,
        points,
        selected,
    });
    report.step_functions = Some(step_functions);
    Ok(report)
}

pub fn cmd_stability(cfg: &RunConfig) -> Result<Report> {
    let started = cfg.timestamp.clone().unwrap_or_else(timestamp_now);
    let (loaded, summary) = load(cfg)?;
    let data = &loaded.dataset;
    let w = cfg.weights.resolve(data.outcome())?;
    let grid = CutpointGrid::build(data, &cfg.grid)?;
    let sc = cfg.stability_config();
    let res = stability_selection(data, &grid, &w, &sc)?;
    let cutoffs = select_cutoffs(&res, &grid, sc.threshold)?;

    let mut report = Report::new(ReportKind::Stability, metadata(cfg, started));
    report.data = Some(summary);
    report.weights = Some(w);
    report.selection = Some(SelectionSummary::new(&res, &grid, sc.threshold));
    report.cutoffs = Some(cutoffs);
    report.grid = Some(grid);
    Ok(report)
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<Report> {
    let started = cfg.timestamp.clone().unwrap_or_else(timestamp_now);
    let spec = cfg
        .simulation
        .spec
        .as_ref()
        .ok_or_else(|| Error::Config("scenario not resolved".into()))?;
    let result = run_scenario(
        spec,
        &cfg.feature_model(),
        &cfg.weights,
        &cfg.grid,
        &cfg.stability_config(),
    )?;
    let mut report = Report::new(ReportKind::Simulate, metadata(cfg, started));
    report.scenario = Some(result);
    Ok(report)
}

fn execute(cli: Cli) -> Result<Vec<PathBuf>> {
    let base = match &cli.flags.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = base.resolve(cli.command, &cli.flags)?;
    let level = match cfg.verbosity {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    log::set_max_level(level);
    log::info!(
        "resolved configuration: {}",
        serde_json::to_string(&cfg).expect("config serializes")
    );

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.unwrap_or(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let report = pool.install(|| match cli.command {
        Command::Fit => cmd_fit(&cfg),
        Command::Stability => cmd_stability(&cfg),
        Command::Simulate => cmd_simulate(&cfg),
    })?;
    write_report(&report, &cfg.out)
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::new()
        .filter_level(log::LevelFilter::Debug)
        .parse_env("CUTPOINT_SELECT_LOG")
        .try_init();
    log::set_max_level(log::LevelFilter::Warn);
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(files) => {
            for f in files {
                log::info!("wrote {}", f.display());
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            exit_code(e.kind())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags() -> Flags {
        Flags {
            seed: Some(1),
            ..Flags::default()
        }
    }

    #[test]
    fn flags_override_file() {
        let cfg = RunConfig::from_toml(
            "seed = 5\n[stability]\nthreshold = 0.8\nsubsamples = 20\n[weights]\nrule = \"explicit\"\nomega = 4.0\n",
        )
        .unwrap();
        let f = Flags {
            threshold: Some(0.9),
            ..flags()
        };
        let r = cfg.resolve(Command::Stability, &f).unwrap();
        assert_eq!(r.seed, Some(1));
        assert_eq!(r.stability.threshold, 0.9);
        assert_eq!(r.stability.subsamples, 20);
        assert_eq!(r.weights, WeightRule::Explicit { omega: 4.0 });
        assert!(r.workers.unwrap() >= 1);
    }

    #[test]
    fn config_errors_are_config_kind() {
        let bad = |f: Flags, c: Command| {
            RunConfig::default().resolve(c, &f).unwrap_err().kind()
        };
        assert_eq!(bad(Flags { threshold: Some(1.01), ..flags() }, Command::Stability), ErrorKind::Config);
        assert_eq!(bad(Flags { omega: Some(0.5), ..flags() }, Command::Fit), ErrorKind::Config);
        assert_eq!(bad(Flags { scenario: Some("Z".into()), ..flags() }, Command::Simulate), ErrorKind::Config);
        assert_eq!(bad(Flags { workers: Some(0), ..flags() }, Command::Fit), ErrorKind::Config);
        assert!(RunConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn seed_is_materialized_and_hash_tracks_config() {
        let f = Flags::default();
        let r = RunConfig::default().resolve(Command::Fit, &f).unwrap();
        assert!(r.seed.is_some());
        let a = RunConfig::default().resolve(Command::Fit, &flags()).unwrap();
        let b = RunConfig::default().resolve(Command::Fit, &flags()).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let c = RunConfig::default()
            .resolve(Command::Fit, &Flags { seed: Some(2), ..Flags::default() })
            .unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn resolved_config_round_trips_through_toml() {
        let r = RunConfig::default()
            .resolve(Command::Simulate, &Flags { replications: Some(3), ..flags() })
            .unwrap();
        assert_eq!(r.simulation.spec.as_ref().unwrap().replications, 3);
        let text = toml::to_string(&r).unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), r);
    }
}
