//! Synthetic benchmark: correlated CBC-like features, outcomes from a known
//! additive logistic model with one true cutoff per relevant predictor, and
//! replicated stability selection to measure how often the truth is recovered.

mod copula;
mod scenario;

pub use copula::{psd_cholesky, FeatureModel, Marginal, PredictorModel};
pub use scenario::{
    calibrate_intercept, derive_seed, generate_features, generate_outcomes, run_scenario,
    CorrelationProfile, RelevantEffect, ReplicationSummary, ScenarioResult, ScenarioSpec,
    TrueEffect, TruthSummary,
};
