use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::FeatureModel;
use crate::basis::{expand, quantile_sorted, ColumnKey, CutpointGrid, Dataset, DesignMatrix, GridSpec};
use crate::error::{Error, Result};
use crate::solver::{logit, sigmoid, FitOptions, WeightRule};
use crate::stability::{stability_on_design, StabilityConfig};

/// Mixes a master seed with a stream index (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const FEATURE_STREAM: u64 = u64::MAX;

/// Draws `n` feature rows from the copula model.
pub fn generate_features(model: &FeatureModel, n: usize, seed: u64) -> Array2<f64> {
    model.generate(n, seed)
}

/// A true step `effect · 1{x_predictor > cutoff}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueEffect {
    pub predictor: usize,
    pub cutoff: f64,
    pub effect: f64,
}

fn additive_part(row: ndarray::ArrayView1<'_, f64>, effects: &[TrueEffect]) -> f64 {
    effects
        .iter()
        .filter(|e| row[e.predictor] > e.cutoff)
        .map(|e| e.effect)
        .sum()
}

/// Intercept giving a mean event probability of `target_rate` on `features`.
///
/// The mean of `sigmoid(β_0 + f(x_i))` is strictly increasing in `β_0`, so the
/// root is found by bisection on a bracket that must contain it.
pub fn calibrate_intercept(
    features: ArrayView2<'_, f64>,
    effects: &[TrueEffect],
    target_rate: f64,
) -> Result<f64> {
    if !(target_rate > 0.0 && target_rate < 1.0) {
        return Err(Error::Config(format!(
            "target rate must lie in (0, 1), got {target_rate}"
        )));
    }
    let base = logit(target_rate);
    if features.nrows() == 0 {
        return Ok(base);
    }
    let f: Vec<f64> = features
        .rows()
        .into_iter()
        .map(|r| additive_part(r, effects))
        .collect();
    let rate = |b0: f64| f.iter().map(|&v| sigmoid(b0 + v)).sum::<f64>() / f.len() as f64;
    // Every term is below (above) the target at the lower (upper) end.
    let spread = effects.iter().map(|e| e.effect.abs()).sum::<f64>() + 1.0;
    let (mut lo, mut hi) = (base - spread, base + spread);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) < target_rate {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Independent Bernoulli outcomes under the additive logistic model.
pub fn generate_outcomes(
    features: ArrayView2<'_, f64>,
    effects: &[TrueEffect],
    intercept: f64,
    seed: u64,
) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    features
        .rows()
        .into_iter()
        .map(|r| {
            let p = sigmoid(intercept + additive_part(r, effects));
            u8::from(rng.gen::<f64>() < p)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevantEffect {
    pub predictor: String,
    /// Percentile (0–100) of the predictor at which the true cutoff sits.
    pub percentile: f64,
    pub effect: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum CorrelationProfile {
    /// Keep the feature model's own correlations.
    Base,
    /// Correlation `rho` among the relevant predictors and to all others.
    Low { rho: f64 },
    /// `within` among the relevant predictors, `outside` to all others.
    Block { within: f64, outside: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: String,
    pub relevant: Vec<RelevantEffect>,
    pub target_rate: f64,
    /// Rows per replication.
    pub n: usize,
    pub replications: usize,
    pub correlation: CorrelationProfile,
    /// Draw the features once and regenerate only the outcome per replication.
    pub reuse_features: bool,
}

/// Relevant predictors of the two-predictor (A/B) and five-predictor (C/D) scenarios.
const PAIR: [&str; 2] = ["P", "RDW-CV"];
const BLOCK: [&str; 5] = ["P", "RDW-CV", "IG", "Le", "MCV"];
pub const EXTREME_PERCENTILE: f64 = 95.0;
pub const CENTRAL_PERCENTILE: f64 = 50.0;
/// Log-odds step of a true cutoff at a central percentile.
pub const DEFAULT_EFFECT: f64 = 1.5;
/// Log-odds step of a true cutoff in a tail. Smaller than the central one:
/// at 1.5 a 5% tail group is found every time, which hides the scarce-tail
/// regime the A/D scenarios exist to show.
pub const TAIL_EFFECT: f64 = 1.1;

impl ScenarioSpec {
    /// Preset scenarios on [`FeatureModel::cbc_default`]: `A`, `B`, `C`, `D`,
    /// or `null` (no relevant predictor).
    pub fn preset(id: &str) -> Result<Self> {
        let make = |names: &[&str], pct: f64| -> Vec<RelevantEffect> {
            names
                .iter()
                .enumerate()
                .map(|(k, name)| {
                    let negative = k % 2 == 1;
                    let size = if pct == CENTRAL_PERCENTILE { DEFAULT_EFFECT } else { TAIL_EFFECT };
                    RelevantEffect {
                        predictor: name.to_string(),
                        // A negative step at the upper tail would mark a rare
                        // low-risk group. Mirror it so each tail group is a
                        // rare high-risk one.
                        percentile: if negative && pct > CENTRAL_PERCENTILE { 100.0 - pct } else { pct },
                        effect: if negative { -size } else { size },
                    }
                })
                .collect()
        };
        let low = CorrelationProfile::Low { rho: 0.1 };
        let block = CorrelationProfile::Block {
            within: 0.7,
            outside: 0.1,
        };
        let (relevant, correlation) = match id {
            "A" => (make(&PAIR, EXTREME_PERCENTILE), low),
            "B" => (make(&PAIR, CENTRAL_PERCENTILE), low),
            "C" => (make(&BLOCK, CENTRAL_PERCENTILE), block),
            "D" => (make(&BLOCK, EXTREME_PERCENTILE), block),
            "null" => (Vec::new(), CorrelationProfile::Base),
            other => return Err(Error::Config(format!("unknown scenario `{other}`"))),
        };
        Ok(ScenarioSpec {
            id: id.to_string(),
            relevant,
            target_rate: 0.07,
            n: 9594,
            replications: 100,
            correlation,
            reuse_features: true,
        })
    }

    /// Checks the spec against `model`, including the structure required of
    /// the named scenarios A–D.
    pub fn validate(&self, model: &FeatureModel) -> Result<()> {
        let err = |m: String| Err(Error::Config(format!("scenario {}: {m}", self.id)));
        if !(self.target_rate > 0.0 && self.target_rate < 1.0) {
            return err(format!("target rate {} outside (0, 1)", self.target_rate));
        }
        if self.replications == 0 || self.n < 2 {
            return err("need at least one replication and two rows".into());
        }
        let mut seen = Vec::new();
        for r in &self.relevant {
            if model.index_of(&r.predictor).is_none() {
                return err(format!("unknown predictor `{}`", r.predictor));
            }
            if seen.contains(&r.predictor) {
                return err(format!("more than one nonzero effect on `{}`", r.predictor));
            }
            if r.effect == 0.0 || !r.effect.is_finite() {
                return err(format!("effect on `{}` must be finite and nonzero", r.predictor));
            }
            if !(r.percentile > 0.0 && r.percentile < 100.0) {
                return err(format!("percentile {} outside (0, 100)", r.percentile));
            }
            seen.push(r.predictor.clone());
        }
        let (count, extreme, block) = match self.id.as_str() {
            "A" => (2, true, false),
            "B" => (2, false, false),
            "C" => (5, false, true),
            "D" => (5, true, true),
            _ => return Ok(()),
        };
        if self.relevant.len() != count {
            return err(format!("expects {count} relevant predictors"));
        }
        for r in &self.relevant {
            let ok = if extreme {
                r.percentile <= 5.0 || r.percentile >= 95.0
            } else {
                (25.0..=75.0).contains(&r.percentile)
            };
            if !ok {
                return err(format!("cutoff percentile {} violates the scenario layout", r.percentile));
            }
        }
        match (block, self.correlation) {
            (true, CorrelationProfile::Block { within, outside })
                if within >= 0.6 && outside.abs() <= 0.2 => {}
            (true, _) => return err("needs a block profile with within ≥ 0.6, outside ≤ 0.2".into()),
            (false, CorrelationProfile::Low { rho }) if rho.abs() <= 0.2 => {}
            (false, _) => return err("needs a low-correlation profile (|ρ| ≤ 0.2)".into()),
        }
        Ok(())
    }

    fn relevant_indices(&self, model: &FeatureModel) -> Vec<usize> {
        self.relevant
            .iter()
            .map(|r| model.index_of(&r.predictor).expect("validated"))
            .collect()
    }

    /// The feature model with this scenario's correlation profile applied.
    pub fn feature_model(&self, model: &FeatureModel) -> Result<FeatureModel> {
        let idx = self.relevant_indices(model);
        match self.correlation {
            CorrelationProfile::Base => Ok(model.clone()),
            CorrelationProfile::Low { rho } => model.with_relevant_block(&idx, rho, rho),
            CorrelationProfile::Block { within, outside } => {
                model.with_relevant_block(&idx, within, outside)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationSummary {
    pub index: usize,
    pub intercept: f64,
    pub event_rate: f64,
    pub omega: f64,
    pub successful_fits: usize,
    pub failed_fits: usize,
    /// Selection probability of each true cutoff column.
    pub true_probabilities: Vec<f64>,
    /// Whether each true cutoff column reached the selection threshold.
    pub true_selected: Vec<bool>,
    /// Whether each true cutoff column is nonzero in one full-sample fit.
    pub true_nonzero: Vec<bool>,
    pub max_irrelevant_probability: f64,
    #[serde(skip)]
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthSummary {
    pub predictor: String,
    pub percentile: f64,
    pub effect: f64,
    /// Cutoff value on the (first) feature draw.
    pub cutoff: f64,
    /// Design column matched to the true cutoff.
    pub column: usize,
    /// Fraction of replications in which the column reached the threshold.
    pub detection_rate: f64,
    /// Fraction of replications in which a single full-sample fit kept it.
    pub nonzero_rate: f64,
    pub mean_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioResult {
    pub id: String,
    pub names: Vec<String>,
    pub columns: Vec<ColumnKey>,
    pub relevant: Vec<usize>,
    pub mean_probabilities: Vec<f64>,
    pub truths: Vec<TruthSummary>,
    pub replications: Vec<ReplicationSummary>,
    pub failed_replications: usize,
}

impl ScenarioResult {
    /// Largest mean selection probability over the columns of predictors
    /// without a true effect.
    pub fn max_irrelevant_mean(&self) -> f64 {
        self.columns
            .iter()
            .zip(&self.mean_probabilities)
            .filter(|(c, _)| !self.relevant.contains(&c.predictor))
            .map(|(_, &p)| p)
            .fold(0.0, f64::max)
    }
}

struct Prepared {
    grid: CutpointGrid,
    design: DesignMatrix,
    effects: Vec<TrueEffect>,
    true_columns: Vec<usize>,
    features: Array2<f64>,
}

fn prepare(
    spec: &ScenarioSpec,
    model: &FeatureModel,
    grid_spec: &GridSpec,
    seed: u64,
) -> Result<Prepared> {
    let features = generate_features(model, spec.n, seed);
    let idx = spec.relevant_indices(model);
    let effects: Vec<TrueEffect> = spec
        .relevant
        .iter()
        .zip(&idx)
        .map(|(r, &j)| {
            let mut col = features.column(j).to_vec();
            col.sort_by(f64::total_cmp);
            TrueEffect {
                predictor: j,
                cutoff: quantile_sorted(&col, r.percentile),
                effect: r.effect,
            }
        })
        .collect();
    // The outcome does not enter the grid or the expansion.
    let placeholder = Dataset::new(features.clone(), vec![0; spec.n], model.names())?;
    let grid = CutpointGrid::build(&placeholder, grid_spec)?;
    let design = expand(&placeholder, &grid)?;
    let true_columns = effects
        .iter()
        .map(|e| {
            let r = design.block(e.predictor);
            r.clone()
                .min_by(|&a, &b| {
                    let da = (design.colmap()[a].cutpoint - e.cutoff).abs();
                    let db = (design.colmap()[b].cutpoint - e.cutoff).abs();
                    da.total_cmp(&db)
                })
                .expect("non-empty block")
        })
        .collect();
    Ok(Prepared {
        grid,
        design,
        effects,
        true_columns,
        features,
    })
}

fn replicate(
    index: usize,
    prep: &Prepared,
    spec: &ScenarioSpec,
    weights: &WeightRule,
    cfg: &StabilityConfig,
) -> Result<ReplicationSummary> {
    let seed = derive_seed(cfg.seed, index as u64);
    let intercept = calibrate_intercept(prep.features.view(), &prep.effects, spec.target_rate)?;
    let y = generate_outcomes(prep.features.view(), &prep.effects, intercept, seed);
    let w = weights.resolve(&y)?;
    let sub_cfg = StabilityConfig {
        seed: derive_seed(seed, 1),
        ..cfg.clone()
    };
    let res = stability_on_design(&prep.design, &y, &w, &sub_cfg)?;
    let full = cfg
        .lambda_rule
        .fit(&prep.design, &y, &w, &FitOptions::default())?;

    let relevant: Vec<usize> = prep.effects.iter().map(|e| e.predictor).collect();
    let true_probabilities: Vec<f64> = prep
        .true_columns
        .iter()
        .map(|&c| res.probabilities[c])
        .collect();
    let max_irrelevant_probability = res
        .columns
        .iter()
        .zip(&res.probabilities)
        .filter(|(c, _)| !relevant.contains(&c.predictor))
        .map(|(_, &p)| p)
        .fold(0.0, f64::max);
    Ok(ReplicationSummary {
        index,
        intercept,
        event_rate: y.iter().map(|&v| f64::from(v)).sum::<f64>() / y.len() as f64,
        omega: w.omega(),
        successful_fits: res.successful,
        failed_fits: res.failed,
        true_selected: true_probabilities.iter().map(|&p| p >= cfg.threshold).collect(),
        true_nonzero: prep
            .true_columns
            .iter()
            .map(|&c| full.coefficients[c] != 0.0)
            .collect(),
        true_probabilities,
        max_irrelevant_probability,
        probabilities: res.probabilities,
    })
}

/// Runs every replication of a scenario and aggregates selection
/// probabilities and detection rates. `cfg.seed` is the master seed.
pub fn run_scenario(
    spec: &ScenarioSpec,
    model: &FeatureModel,
    weights: &WeightRule,
    grid_spec: &GridSpec,
    cfg: &StabilityConfig,
) -> Result<ScenarioResult> {
    spec.validate(model)?;
    cfg.validate()?;
    let model = spec.feature_model(model)?;

    let fixed = if spec.reuse_features {
        Some(prepare(spec, &model, grid_spec, derive_seed(cfg.seed, FEATURE_STREAM))?)
    } else {
        None
    };

    let outcomes: Vec<Result<ReplicationSummary>> = (0..spec.replications)
        .into_par_iter()
        .map(|r| match &fixed {
            Some(prep) => replicate(r, prep, spec, weights, cfg),
            None => {
                let prep = prepare(spec, &model, grid_spec, derive_seed(cfg.seed, r as u64 + (1 << 32)))?;
                replicate(r, &prep, spec, weights, cfg)
            }
        })
        .collect();

    // Column layout and truth mapping from the fixed draw, or the first one.
    let layout = match fixed {
        Some(p) => p,
        None => prepare(spec, &model, grid_spec, derive_seed(cfg.seed, 1 << 32))?,
    };
    let ncols = layout.design.n_cols();

    let mut replications = Vec::new();
    let mut failed = 0;
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(s) if s.probabilities.len() == ncols => replications.push(s),
            Ok(_) => {
                log::warn!("replication {r}: grid layout differs from the first draw; skipped");
                failed += 1;
            }
            Err(e) => {
                log::warn!("replication {r} failed: {e}");
                failed += 1;
            }
        }
    }
    if failed * 10 > spec.replications || replications.is_empty() {
        return Err(Error::TooManyFailedReplications {
            failed,
            total: spec.replications,
        });
    }

    let m = replications.len() as f64;
    let mut mean_probabilities = vec![0.0; ncols];
    for s in &replications {
        for (acc, p) in mean_probabilities.iter_mut().zip(&s.probabilities) {
            *acc += p;
        }
    }
    mean_probabilities.iter_mut().for_each(|v| *v /= m);

    let truths = spec
        .relevant
        .iter()
        .enumerate()
        .map(|(t, rel)| TruthSummary {
            predictor: rel.predictor.clone(),
            percentile: rel.percentile,
            effect: rel.effect,
            cutoff: layout.effects[t].cutoff,
            column: layout.true_columns[t],
            detection_rate: replications.iter().filter(|s| s.true_selected[t]).count() as f64 / m,
            nonzero_rate: replications.iter().filter(|s| s.true_nonzero[t]).count() as f64 / m,
            mean_probability: mean_probabilities[layout.true_columns[t]],
        })
        .collect();

    Ok(ScenarioResult {
        id: spec.id.clone(),
        names: layout.grid.predictors().iter().map(|g| g.name.clone()).collect(),
        columns: layout.design.colmap().to_vec(),
        relevant: layout.effects.iter().map(|e| e.predictor).collect(),
        mean_probabilities,
        truths,
        replications,
        failed_replications: failed,
    })
}
