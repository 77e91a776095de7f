//! Weighted L1-penalized logistic regression on an indicator design.
//!
//! Minimizes
//!
//! ```text
//! F(β_0, β) = Σ_i ω_i [ln(1 + e^{η_i}) − y_i η_i] + λ ‖β‖_1,   η_i = β_0 + Σ_c χ_ic β_c
//! ```
//!
//! with `ω_i = ω ≥ 1` on rows with `y_i = 1` and `ω_i = 1` otherwise. The
//! intercept is estimated but not penalized. Columns are never standardized:
//! all indicators share the same 0/1 scale.
//!
//! The solver is proximal Newton: each outer step builds the IRLS quadratic
//! model of the weighted loss, minimizes model + penalty by cyclic coordinate
//! descent with soft-thresholding, then backtracks on the true objective.
//! It stops when the first-order (KKT) residual drops below the tolerance.

mod cd;

use serde::{Deserialize, Serialize};

use crate::basis::{class_counts, DesignMatrix};
use crate::error::{Error, Result};

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// How the class-1 weight is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum WeightRule {
    Explicit { omega: f64 },
    /// `ω = n₀ / n₁`.
    #[default]
    Balanced,
}

impl WeightRule {
    pub fn resolve(&self, y: &[u8]) -> Result<WeightSpec> {
        match *self {
            WeightRule::Explicit { omega } => WeightSpec::explicit(omega),
            WeightRule::Balanced => WeightSpec::balanced(y),
        }
    }
}

/// Resolved cost-sensitive weights: `omega` on `y = 1` rows, 1 on `y = 0` rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    omega: f64,
    rule: WeightRule,
}

impl WeightSpec {
    pub fn explicit(omega: f64) -> Result<Self> {
        if !omega.is_finite() || omega < 1.0 {
            return Err(Error::InvalidWeight(omega));
        }
        Ok(WeightSpec {
            omega,
            rule: WeightRule::Explicit { omega },
        })
    }

    /// Balanced weight `n₀ / n₁`, floored at 1 when class 1 is the majority.
    pub fn balanced(y: &[u8]) -> Result<Self> {
        let (n0, n1) = class_counts(y);
        if n0 == 0 || n1 == 0 {
            return Err(Error::SingleClass);
        }
        Ok(WeightSpec {
            omega: (n0 as f64 / n1 as f64).max(1.0),
            rule: WeightRule::Balanced,
        })
    }

    pub fn unweighted() -> Self {
        WeightSpec {
            omega: 1.0,
            rule: WeightRule::Explicit { omega: 1.0 },
        }
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn rule(&self) -> WeightRule {
        self.rule
    }

    #[inline]
    pub fn row_weight(&self, y: u8) -> f64 {
        if y == 1 {
            self.omega
        } else {
            1.0
        }
    }

    /// Weighted prevalence `ω n₁ / (n₀ + ω n₁)`, the intercept-only fitted probability.
    pub fn weighted_prevalence(&self, y: &[u8]) -> f64 {
        let (n0, n1) = class_counts(y);
        let w1 = self.omega * n1 as f64;
        w1 / (n0 as f64 + w1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Target on the KKT residual (absolute, in units of the summed loss gradient).
    pub tolerance: f64,
    /// Cap on coordinate sweeps, summed over all outer steps.
    pub max_iterations: usize,
    /// Fit on column-centered indicators `χ − mean`. Changes only the intercept.
    pub center: bool,
    /// Starting point `(intercept, coefficients)`.
    #[serde(skip)]
    pub warm_start: Option<(f64, Vec<f64>)>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tolerance: 1e-7,
            max_iterations: 10_000,
            center: false,
            warm_start: None,
        }
    }
}

/// One penalized fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    /// Penalized weighted negative log-likelihood at the returned point.
    pub objective: f64,
    pub kkt_violation: f64,
    /// Coordinate sweeps performed.
    pub iterations: usize,
    /// Whether the design columns were centered; if so `intercept` is on that scale.
    #[serde(default)]
    pub centered: bool,
}

impl FitResult {
    pub fn nonzero_count(&self) -> usize {
        self.coefficients.iter().filter(|b| **b != 0.0).count()
    }

    pub fn selected(&self) -> impl Iterator<Item = usize> + '_ {
        self.coefficients
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != 0.0)
            .map(|(c, _)| c)
    }

    /// Intercept for the uncentered indicators.
    pub fn raw_intercept(&self, design: &DesignMatrix) -> f64 {
        if self.centered {
            self.intercept
                - design
                    .means()
                    .iter()
                    .zip(&self.coefficients)
                    .map(|(m, b)| m * b)
                    .sum::<f64>()
        } else {
            self.intercept
        }
    }

    /// Fitted probabilities for the rows of `design`.
    pub fn predict(&self, design: &DesignMatrix) -> Vec<f64> {
        design
            .linear_predictor(self.raw_intercept(design), &self.coefficients)
            .into_iter()
            .map(sigmoid)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathSpec {
    /// Number of λ values.
    pub count: usize,
    /// `λ_min / λ_max`.
    pub ratio: f64,
}

impl Default for PathSpec {
    fn default() -> Self {
        PathSpec {
            count: 50,
            ratio: 0.01,
        }
    }
}

impl PathSpec {
    /// Log-spaced, strictly decreasing, starting at `lambda_max`.
    pub fn lambdas(&self, lambda_max: f64) -> Vec<f64> {
        if self.count == 1 {
            return vec![lambda_max];
        }
        (0..self.count)
            .map(|l| lambda_max * self.ratio.powf(l as f64 / (self.count - 1) as f64))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.count == 0 || !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::Config(format!(
                "path needs count ≥ 1 and ratio in (0, 1), got {} and {}",
                self.count, self.ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoPath {
    pub lambdas: Vec<f64>,
    pub fits: Vec<FitResult>,
}

fn check_dims(design: &DesignMatrix, y: &[u8], beta: &[f64]) {
    assert_eq!(y.len(), design.n_rows(), "outcome length mismatch");
    assert_eq!(beta.len(), design.n_cols(), "coefficient length mismatch");
}

/// Weighted negative log-likelihood `−Σ_i ω_i [y_i η_i − ln(1 + e^{η_i})]`.
pub fn weighted_nll(
    design: &DesignMatrix,
    y: &[u8],
    w: &WeightSpec,
    intercept: f64,
    beta: &[f64],
) -> f64 {
    check_dims(design, y, beta);
    design
        .linear_predictor(intercept, beta)
        .iter()
        .zip(y)
        .map(|(&eta, &yi)| w.row_weight(yi) * (softplus(eta) - f64::from(yi) * eta))
        .sum()
}

/// Gradient of [`weighted_nll`]: `(∂/∂β_0, ∂/∂β_c)` with
/// `∂/∂β_c = −Σ_i ω_i χ_ic (y_i − p_i)`.
///
/// Computed from the sparse column supports, independently of the solver's
/// internal bookkeeping, so it doubles as an optimality certificate.
pub fn gradient(
    design: &DesignMatrix,
    y: &[u8],
    w: &WeightSpec,
    intercept: f64,
    beta: &[f64],
) -> (f64, Vec<f64>) {
    check_dims(design, y, beta);
    let resid: Vec<f64> = design
        .linear_predictor(intercept, beta)
        .iter()
        .zip(y)
        .map(|(&eta, &yi)| w.row_weight(yi) * (sigmoid(eta) - f64::from(yi)))
        .collect();
    let g0 = resid.iter().sum();
    let g = (0..design.n_cols())
        .map(|c| design.support(c).iter().map(|&i| resid[i as usize]).sum())
        .collect();
    (g0, g)
}

/// Largest KKT residual of `fit` for penalty `lambda`, recomputed with [`gradient`].
pub fn kkt_violation(design: &DesignMatrix, y: &[u8], w: &WeightSpec, fit: &FitResult) -> f64 {
    let (g0, g) = gradient(design, y, w, fit.raw_intercept(design), &fit.coefficients);
    // Centering shifts every column gradient by mean_c · g0.
    let shift = |c: usize| {
        if fit.centered {
            design.means()[c] * g0
        } else {
            0.0
        }
    };
    g.iter()
        .zip(&fit.coefficients)
        .enumerate()
        .map(|(c, (&gc, &b))| kkt_term(gc - shift(c), b, fit.lambda))
        .fold(g0.abs(), f64::max)
}

#[inline]
pub(crate) fn kkt_term(grad: f64, beta: f64, lambda: f64) -> f64 {
    if beta == 0.0 {
        (grad.abs() - lambda).max(0.0)
    } else {
        (grad + lambda * beta.signum()).abs()
    }
}

fn require_both_classes(y: &[u8]) -> Result<(usize, usize)> {
    let (n0, n1) = class_counts(y);
    if n0 == 0 || n1 == 0 {
        return Err(Error::SingleClass);
    }
    Ok((n0, n1))
}

/// Smallest λ at which every penalized coefficient is zero.
pub fn lambda_max(design: &DesignMatrix, y: &[u8], w: &WeightSpec) -> Result<f64> {
    assert_eq!(y.len(), design.n_rows(), "outcome length mismatch");
    let (n0, n1) = require_both_classes(y)?;
    let pbar = w.weighted_prevalence(y);
    let resid: Vec<f64> = y
        .iter()
        .map(|&yi| w.row_weight(yi) * (pbar - f64::from(yi)))
        .collect();
    let lmax = (0..design.n_cols())
        .map(|c| {
            design
                .support(c)
                .iter()
                .map(|&i| resid[i as usize])
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max);
    let scale = n0 as f64 + w.omega() * n1 as f64;
    if lmax <= 1e-12 * scale {
        return Err(Error::NoSignal);
    }
    Ok(lmax)
}

/// Solves the penalized problem at one `lambda`.
pub fn fit(
    design: &DesignMatrix,
    y: &[u8],
    w: &WeightSpec,
    lambda: f64,
    opts: &FitOptions,
) -> Result<FitResult> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidLambda(lambda));
    }
    assert_eq!(y.len(), design.n_rows(), "outcome length mismatch");
    require_both_classes(y)?;
    if let Some((_, b)) = &opts.warm_start {
        if b.len() != design.n_cols() {
            return Err(Error::DimensionMismatch(format!(
                "warm start has {} coefficients, design has {} columns",
                b.len(),
                design.n_cols()
            )));
        }
    }
    cd::solve(design, y, w, lambda, opts)
}

/// Fits a log-spaced decreasing λ path with warm starts.
pub fn fit_path(
    design: &DesignMatrix,
    y: &[u8],
    w: &WeightSpec,
    path: &PathSpec,
    opts: &FitOptions,
) -> Result<LassoPath> {
    path.validate()?;
    let lambdas = path.lambdas(lambda_max(design, y, w)?);
    let mut fits: Vec<FitResult> = Vec::with_capacity(lambdas.len());
    for &lambda in &lambdas {
        let mut o = opts.clone();
        if let Some(prev) = fits.last() {
            o.warm_start = Some((prev.intercept, prev.coefficients.clone()));
        }
        let f = fit(design, y, w, lambda, &o).map_err(|e| Error::PathFit {
            lambda,
            source: Box::new(e),
        })?;
        fits.push(f);
    }
    Ok(LassoPath { lambdas, fits })
}
