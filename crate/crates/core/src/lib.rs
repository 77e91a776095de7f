//! Cutoff discovery for binary outcomes.
//!
//! `cutpoint_select` finds which continuous predictors move the risk of a
//! binary outcome, and at which values. Each predictor is expanded into
//! threshold indicators `1{x > q}` over a grid of candidate cutpoints; a
//! cost-sensitive, L1-penalized additive logistic regression picks the few
//! thresholds that matter, and refitting on many random half-samples turns
//! those picks into selection probabilities.
//!
//! The pipeline, module by module:
//!
//! * [`basis`]: candidate grids, indicator expansion, fitted step functions.
//! * [`solver`]: the weighted lasso-logistic solver, λ paths, KKT checks.
//! * [`stability`]: subsample refits, selection probabilities, recommended cutoffs.
//! * [`simulate`]: Gaussian-copula feature generator and the A–D benchmark scenarios.
//! * [`io`]: CSV ingestion and report writing (CSV, JSON, SVG).
//! * [`cli`]: the `cutpoint-select` command-line front end.
//!
//! ```
//! use cutpoint_select::basis::{expand, CutpointGrid, Dataset, GridSpec};
//! use cutpoint_select::solver::{fit, lambda_max, FitOptions, WeightSpec};
//! use ndarray::Array2;
//!
//! // One predictor; the outcome is mostly 1 above x = 5.
//! let x: Vec<f64> = (0..40).map(|i| i as f64 / 4.0).collect();
//! let y: Vec<u8> = x.iter().enumerate().map(|(i, &v)| u8::from(v > 5.0 && i % 5 != 0)).collect();
//! let data = Dataset::new(Array2::from_shape_vec((40, 1), x)?, y, vec!["x".into()])?;
//!
//! let grid = CutpointGrid::build(&data, &GridSpec::default())?;
//! let design = expand(&data, &grid)?;
//! let w = WeightSpec::balanced(data.outcome())?;
//! let lmax = lambda_max(&design, data.outcome(), &w)?;
//! let f = fit(&design, data.outcome(), &w, 0.3 * lmax, &FitOptions::default())?;
//! assert!(f.kkt_violation <= 1e-7);
//! assert!(f.nonzero_count() >= 1);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod basis;
pub mod cli;
pub mod error;
pub mod io;
pub mod simulate;
pub mod solver;
pub mod stability;

pub use error::{Error, ErrorKind, Result};

// The guide's code listings run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/basis.md")]
    mod basis {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/stability.md")]
    mod stability {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
