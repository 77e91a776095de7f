//! Stability selection over class-stratified half-samples.
//!
//! The lasso is refitted on `B` random subsamples; the selection probability
//! of column `(j, k)` is the fraction of successful fits in which `β̂_j^k ≠ 0`.
//! Subsample membership is drawn serially from the seed before any fitting,
//! so the parallel schedule cannot change the result.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{class_counts, expand, ColumnKey, CutpointGrid, Dataset, DesignMatrix};
use crate::error::{Error, Result};
use crate::solver::{self, FitOptions, FitResult, PathSpec, WeightSpec};

/// Penalty used for each subsample fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum LambdaRule {
    /// The same λ on every subsample.
    Fixed { lambda: f64 },
    /// `fraction · λ_max`, with `λ_max` recomputed on each subsample.
    FractionOfMax { fraction: f64 },
    /// Minimizer of the extended BIC along a warm-started path, per subsample.
    Ebic { gamma: f64, path: PathSpec },
}

impl Default for LambdaRule {
    fn default() -> Self {
        LambdaRule::Ebic {
            gamma: 1.0,
            path: PathSpec {
                count: 30,
                ratio: 0.05,
            },
        }
    }
}

impl LambdaRule {
    fn validate(&self) -> Result<()> {
        match self {
            LambdaRule::Fixed { lambda } if !(lambda.is_finite() && *lambda >= 0.0) => {
                Err(Error::InvalidLambda(*lambda))
            }
            LambdaRule::FractionOfMax { fraction } if !(*fraction > 0.0 && *fraction <= 1.0) => {
                Err(Error::Config(format!(
                    "λ fraction must lie in (0, 1], got {fraction}"
                )))
            }
            LambdaRule::Ebic { gamma, path } => {
                if !(gamma.is_finite() && *gamma >= 0.0) {
                    return Err(Error::Config(format!("EBIC γ must be ≥ 0, got {gamma}")));
                }
                if path.count < 2 || !(path.ratio > 0.0 && path.ratio < 1.0) {
                    return Err(Error::Config(
                        "EBIC path needs count ≥ 2 and ratio in (0, 1)".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Fits one (sub)sample under this rule. A subsample with no signal at all
    /// yields the empty model.
    pub fn fit(
        &self,
        design: &DesignMatrix,
        y: &[u8],
        w: &WeightSpec,
        opts: &FitOptions,
    ) -> Result<FitResult> {
        let lmax = match solver::lambda_max(design, y, w) {
            Ok(l) => l,
            Err(Error::NoSignal) => return null_fit(design, y, w),
            Err(e) => return Err(e),
        };
        match self {
            LambdaRule::Fixed { lambda } => solver::fit(design, y, w, *lambda, opts),
            LambdaRule::FractionOfMax { fraction } => {
                solver::fit(design, y, w, fraction * lmax, opts)
            }
            LambdaRule::Ebic { gamma, path } => ebic_fit(design, y, w, *gamma, path, lmax, opts),
        }
    }
}

fn null_fit(design: &DesignMatrix, y: &[u8], w: &WeightSpec) -> Result<FitResult> {
    // λ_max = 0 means the intercept-only fit is optimal for every λ.
    solver::fit(design, y, w, 0.0, &FitOptions::default()).or_else(|_| {
        let b0 = solver::logit(w.weighted_prevalence(y));
        let beta = vec![0.0; design.n_cols()];
        Ok(FitResult {
            intercept: b0,
            objective: solver::weighted_nll(design, y, w, b0, &beta),
            coefficients: beta,
            lambda: 0.0,
            kkt_violation: 0.0,
            iterations: 0,
            centered: false,
        })
    })
}

/// Extended BIC, `2·NLL_ω + df·ln n + 2γ·df·ln P`, with `P` the number of columns.
pub fn ebic(nll: f64, df: usize, n: usize, n_cols: usize, gamma: f64) -> f64 {
    let df = df as f64;
    2.0 * nll + df * (n as f64).ln() + 2.0 * gamma * df * (n_cols as f64).ln()
}

fn ebic_fit(
    design: &DesignMatrix,
    y: &[u8],
    w: &WeightSpec,
    gamma: f64,
    path: &PathSpec,
    lmax: f64,
    opts: &FitOptions,
) -> Result<FitResult> {
    // Weights are rescaled to average one so the pseudo-likelihood is on the
    // scale of n observations.
    let total: f64 = y.iter().map(|&v| w.row_weight(v)).sum();
    let scale = design.n_rows() as f64 / total;
    let score = |f: &FitResult| {
        let nll = scale * relaxed_nll(design, y, w, f);
        ebic(nll, f.nonzero_count(), design.n_rows(), design.n_cols(), gamma)
    };
    let mut best: Option<(f64, FitResult)> = None;
    let mut worse_in_a_row = 0;
    let mut prev: Option<FitResult> = None;
    for lambda in path.lambdas(lmax) {
        let mut o = opts.clone();
        if let Some(p) = &prev {
            o.warm_start = Some((p.intercept, p.coefficients.clone()));
        }
        let f = solver::fit(design, y, w, lambda, &o)?;
        let s = score(&f);
        match &best {
            Some((b, _)) if s >= *b => worse_in_a_row += 1,
            _ => {
                best = Some((s, f.clone()));
                worse_in_a_row = 0;
            }
        }
        // The criterion is dominated by the df penalty once the path has
        // passed the minimum by several steps.
        if worse_in_a_row >= 5 {
            break;
        }
        prev = Some(f);
    }
    Ok(best.expect("path has at least one point").1)
}

/// Weighted NLL of the unpenalized refit on the support of `f`, so that
/// lasso shrinkage does not favor larger supports.
fn relaxed_nll(design: &DesignMatrix, y: &[u8], w: &WeightSpec, f: &FitResult) -> f64 {
    let support: Vec<usize> = f.selected().collect();
    let penalized = || solver::weighted_nll(design, y, w, f.intercept, &f.coefficients);
    if support.is_empty() {
        return penalized();
    }
    let sub = design.select_columns(&support);
    let opts = FitOptions {
        tolerance: 1e-6,
        max_iterations: 500,
        warm_start: Some((
            f.intercept,
            support.iter().map(|&c| f.coefficients[c]).collect(),
        )),
        ..FitOptions::default()
    };
    // Quasi-separation can leave the refit short of convergence; its best
    // iterate still bounds the infimum from above.
    let refit = match solver::fit(&sub, y, w, 0.0, &opts) {
        Ok(r) => r,
        Err(Error::NonConvergence { best, .. }) => *best,
        Err(_) => return penalized(),
    };
    refit.objective.min(penalized())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityConfig {
    /// Number of subsamples `B`.
    pub subsamples: usize,
    /// Fraction of each class drawn without replacement.
    pub fraction: f64,
    pub lambda_rule: LambdaRule,
    /// Selection threshold `π_thr` used for recommendations.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            subsamples: 100,
            fraction: 0.5,
            lambda_rule: LambdaRule::default(),
            threshold: 0.75,
            seed: 0,
        }
    }
}

impl StabilityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subsamples == 0 {
            return Err(Error::Config("need at least one subsample".into()));
        }
        if !(self.fraction > 0.0 && self.fraction < 1.0) {
            return Err(Error::Config(format!(
                "subsample fraction must lie in (0, 1), got {}",
                self.fraction
            )));
        }
        if !(self.threshold > 0.5 && self.threshold <= 1.0) {
            return Err(Error::Config(format!(
                "selection threshold must lie in (0.5, 1], got {}",
                self.threshold
            )));
        }
        self.lambda_rule.validate()
    }
}

/// Selection probabilities per design column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityResult {
    pub columns: Vec<ColumnKey>,
    pub probabilities: Vec<f64>,
    pub config: StabilityConfig,
    pub omega: f64,
    /// Subsample fits that succeeded (the denominator of every probability).
    pub successful: usize,
    pub failed: usize,
    /// Nonzero coefficients per subsample; `None` for a failed fit.
    pub nonzero_counts: Vec<Option<usize>>,
}

/// Class-stratified subsamples without replacement, each sorted by row index.
pub fn draw_subsamples(y: &[u8], fraction: f64, count: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let zeros: Vec<usize> = (0..y.len()).filter(|&i| y[i] == 0).collect();
    let ones: Vec<usize> = (0..y.len()).filter(|&i| y[i] == 1).collect();
    if zeros.is_empty() || ones.is_empty() {
        return Err(Error::SingleClass);
    }
    let take = |m: usize| ((fraction * m as f64).floor() as usize).clamp(1, m);
    let (k0, k1) = (take(zeros.len()), take(ones.len()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let mut rows: Vec<usize> = index::sample(&mut rng, zeros.len(), k0)
                .into_iter()
                .map(|i| zeros[i])
                .chain(index::sample(&mut rng, ones.len(), k1).into_iter().map(|i| ones[i]))
                .collect();
            rows.sort_unstable();
            rows
        })
        .collect())
}

/// Stability selection on an already-expanded design with caller-supplied
/// subsample memberships. Rows of each subsample are used in the given order.
pub fn stability_from_subsamples(
    design: &DesignMatrix,
    y: &[u8],
    w: &WeightSpec,
    rule: &LambdaRule,
    subsamples: &[Vec<usize>],
) -> Result<(Vec<f64>, usize, Vec<Option<usize>>)> {
    let opts = FitOptions::default();
    let fits: Vec<Result<Vec<usize>>> = subsamples
        .par_iter()
        .map(|rows| {
            let sub = design.select_rows(rows);
            let ys: Vec<u8> = rows.iter().map(|&i| y[i]).collect();
            rule.fit(&sub, &ys, w, &opts)
                .map(|f| f.selected().collect())
        })
        .collect();

    let mut counts = vec![0usize; design.n_cols()];
    let mut successful = 0;
    let mut nonzero = Vec::with_capacity(fits.len());
    for r in fits {
        match r {
            Ok(sel) => {
                successful += 1;
                nonzero.push(Some(sel.len()));
                for c in sel {
                    counts[c] += 1;
                }
            }
            Err(e) => {
                log::debug!("subsample fit failed: {e}");
                nonzero.push(None);
            }
        }
    }
    if successful == 0 {
        return Err(Error::AllFitsFailed(subsamples.len()));
    }
    let failed = subsamples.len() - successful;
    if failed * 20 > subsamples.len() {
        log::warn!(
            "{failed} of {} subsample fits failed; they are excluded from the denominator",
            subsamples.len()
        );
    }
    let probs = counts
        .iter()
        .map(|&c| c as f64 / successful as f64)
        .collect();
    Ok((probs, successful, nonzero))
}

pub fn stability_selection(
    data: &Dataset,
    grids: &CutpointGrid,
    w: &WeightSpec,
    cfg: &StabilityConfig,
) -> Result<StabilityResult> {
    cfg.validate()?;
    let design = expand(data, grids)?;
    stability_on_design(&design, data.outcome(), w, cfg)
}

/// [`stability_selection`] for a design that has already been expanded.
pub fn stability_on_design(
    design: &DesignMatrix,
    y: &[u8],
    w: &WeightSpec,
    cfg: &StabilityConfig,
) -> Result<StabilityResult> {
    cfg.validate()?;
    let (n0, n1) = class_counts(y);
    if n0 == 0 || n1 == 0 {
        return Err(Error::SingleClass);
    }
    let subsamples = draw_subsamples(y, cfg.fraction, cfg.subsamples, cfg.seed)?;
    let (probabilities, successful, nonzero_counts) =
        stability_from_subsamples(design, y, w, &cfg.lambda_rule, &subsamples)?;
    Ok(StabilityResult {
        columns: design.colmap().to_vec(),
        probabilities,
        config: cfg.clone(),
        omega: w.omega(),
        successful,
        failed: cfg.subsamples - successful,
        nonzero_counts,
    })
}

/// A recommended cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub predictor: usize,
    pub name: String,
    pub cutpoint_index: usize,
    pub cutpoint: f64,
    pub probability: f64,
    /// Set when adjacent selected cutpoints were folded into this one.
    pub merged: bool,
    /// Every grid cutpoint folded into this recommendation, ascending.
    pub members: Vec<f64>,
}

/// Columns whose selection probability is at least `threshold`, without merging.
pub fn selected_columns(res: &StabilityResult, threshold: f64) -> Vec<usize> {
    res.probabilities
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= threshold)
        .map(|(c, _)| c)
        .collect()
}

/// Recommended cutoffs: every column with `Π ≥ threshold`, where runs of
/// neighbouring grid cutpoints of one predictor are reported once, at the
/// member with the highest probability. Sorted by probability, descending.
pub fn select_cutoffs(
    res: &StabilityResult,
    grids: &CutpointGrid,
    threshold: f64,
) -> Result<Vec<Recommendation>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config(format!(
            "threshold must lie in (0, 1], got {threshold}"
        )));
    }
    if res.columns.len() != grids.total_columns() {
        return Err(Error::DimensionMismatch(format!(
            "{} probabilities for a grid with {} columns",
            res.columns.len(),
            grids.total_columns()
        )));
    }
    let mut out = Vec::new();
    let selected = selected_columns(res, threshold);
    let mut i = 0;
    while i < selected.len() {
        // Extend the run while the next selected column is the next cutpoint
        // of the same predictor.
        let mut end = i + 1;
        while end < selected.len() {
            let (a, b) = (&res.columns[selected[end - 1]], &res.columns[selected[end]]);
            if a.predictor == b.predictor && a.index + 1 == b.index {
                end += 1;
            } else {
                break;
            }
        }
        let run = &selected[i..end];
        let best = *run
            .iter()
            .reduce(|a, b| {
                if res.probabilities[*b] > res.probabilities[*a] {
                    b
                } else {
                    a
                }
            })
            .unwrap();
        let key = res.columns[best];
        out.push(Recommendation {
            predictor: key.predictor,
            name: grids.predictors()[key.predictor].name.clone(),
            cutpoint_index: key.index,
            cutpoint: key.cutpoint,
            probability: res.probabilities[best],
            merged: run.len() > 1,
            members: run.iter().map(|&c| res.columns[c].cutpoint).collect(),
        });
        i = end;
    }
    out.sort_by(|a, b| {
        b.probability
            .total_cmp(&a.probability)
            .then(a.predictor.cmp(&b.predictor))
            .then(a.cutpoint_index.cmp(&b.cutpoint_index))
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{GridSpec, GridStrategy, PredictorGrid};
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng;

    fn grid3() -> CutpointGrid {
        CutpointGrid::new(vec![
            PredictorGrid {
                name: "a".into(),
                cutpoints: vec![1.0, 2.0, 3.0],
                strategy: GridStrategy::Explicit,
            },
            PredictorGrid {
                name: "b".into(),
                cutpoints: vec![10.0, 20.0],
                strategy: GridStrategy::Explicit,
            },
        ])
        .unwrap()
    }

    fn result_with(probabilities: Vec<f64>) -> StabilityResult {
        StabilityResult {
            columns: grid3().column_keys(),
            probabilities,
            config: StabilityConfig::default(),
            omega: 1.0,
            successful: 100,
            failed: 0,
            nonzero_counts: vec![],
        }
    }

    #[test]
    fn no_selection_when_all_zero() {
        let r = result_with(vec![0.0; 5]);
        assert!(select_cutoffs(&r, &grid3(), 0.75).unwrap().is_empty());
    }

    #[test]
    fn single_certain_cutpoint() {
        let r = result_with(vec![0.0, 0.0, 0.0, 1.0, 0.0]);
        let s = select_cutoffs(&r, &grid3(), 0.75).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].name.as_str(), s[0].cutpoint, s[0].merged), ("b", 10.0, false));
    }

    #[test]
    fn adjacent_cutpoints_merge_at_the_stronger_one() {
        let r = result_with(vec![0.8, 0.9, 0.1, 0.0, 0.0]);
        let s = select_cutoffs(&r, &grid3(), 0.75).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].cutpoint, 2.0);
        assert_eq!(s[0].probability, 0.9);
        assert!(s[0].merged);
        assert_eq!(s[0].members, vec![1.0, 2.0]);
    }

    #[test]
    fn non_adjacent_and_cross_predictor_do_not_merge() {
        let r = result_with(vec![0.8, 0.1, 0.95, 0.9, 0.0]);
        let s = select_cutoffs(&r, &grid3(), 0.75).unwrap();
        let cuts: Vec<f64> = s.iter().map(|x| x.cutpoint).collect();
        assert_eq!(cuts, vec![3.0, 10.0, 1.0]);
        assert!(s.iter().all(|x| !x.merged));
    }

    #[test]
    fn threshold_bounds() {
        let r = result_with(vec![0.0; 5]);
        assert!(select_cutoffs(&r, &grid3(), 0.0).is_err());
        assert!(select_cutoffs(&r, &grid3(), 1.01).is_err());
        let cfg = StabilityConfig {
            threshold: 1.01,
            ..StabilityConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn threshold_is_monotone(p in proptest::collection::vec(0.0f64..=1.0, 5), t1 in 0.01f64..1.0, dt in 0.0f64..0.5) {
            let t2 = (t1 + dt).min(1.0);
            let r = result_with(p);
            let s1 = selected_columns(&r, t1);
            let s2 = selected_columns(&r, t2);
            prop_assert!(s2.iter().all(|c| s1.contains(c)));
        }
    }

    #[test]
    fn subsamples_are_stratified_and_reproducible() {
        let y: Vec<u8> = (0..101).map(|i| u8::from(i % 10 == 0)).collect();
        let a = draw_subsamples(&y, 0.5, 20, 9).unwrap();
        assert_eq!(a, draw_subsamples(&y, 0.5, 20, 9).unwrap());
        assert_ne!(a, draw_subsamples(&y, 0.5, 20, 10).unwrap());
        for rows in &a {
            let ones = rows.iter().filter(|&&i| y[i] == 1).count();
            assert_eq!(ones, 5);
            assert_eq!(rows.len() - ones, 45);
            assert!(rows.windows(2).all(|w| w[0] < w[1]));
        }
        assert!(matches!(draw_subsamples(&[0, 0], 0.5, 1, 0), Err(Error::SingleClass)));
    }

    fn threshold_data(seed: u64, n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let y = x
            .iter()
            .map(|&v| u8::from(rng.gen::<f64>() < if v > 0.5 { 0.6 } else { 0.1 }))
            .collect();
        Dataset::new(Array2::from_shape_vec((n, 1), x).unwrap(), y, vec!["x".into()]).unwrap()
    }

    #[test]
    fn single_subsample_gives_indicator_probabilities() {
        let data = threshold_data(1, 300);
        let grid = CutpointGrid::build(&data, &GridSpec::default()).unwrap();
        let w = WeightSpec::balanced(data.outcome()).unwrap();
        let cfg = StabilityConfig {
            subsamples: 1,
            ..StabilityConfig::default()
        };
        let r = stability_selection(&data, &grid, &w, &cfg).unwrap();
        assert!(r.probabilities.iter().all(|&p| p == 0.0 || p == 1.0));
        assert_eq!(r.nonzero_counts.len(), 1);
    }

    #[test]
    fn reproducible_and_bounded() {
        let data = threshold_data(2, 300);
        let grid = CutpointGrid::build(&data, &GridSpec::default()).unwrap();
        let w = WeightSpec::balanced(data.outcome()).unwrap();
        let cfg = StabilityConfig {
            subsamples: 20,
            seed: 5,
            lambda_rule: LambdaRule::FractionOfMax { fraction: 0.2 },
            ..StabilityConfig::default()
        };
        let a = stability_selection(&data, &grid, &w, &cfg).unwrap();
        let b = stability_selection(&data, &grid, &w, &cfg).unwrap();
        assert_eq!(a, b);
        for &p in &a.probabilities {
            assert!((0.0..=1.0).contains(&p));
            let scaled = p * 20.0;
            assert!((scaled - scaled.round()).abs() < 1e-12);
        }
    }

    #[test]
    fn permuting_rows_with_matching_subsamples_is_invariant() {
        let data = threshold_data(3, 200);
        let grid = CutpointGrid::build(&data, &GridSpec::default()).unwrap();
        let design = expand(&data, &grid).unwrap();
        let w = WeightSpec::balanced(data.outcome()).unwrap();
        let rule = LambdaRule::FractionOfMax { fraction: 0.1 };
        let subs = draw_subsamples(data.outcome(), 0.5, 15, 1).unwrap();

        // new row r holds old row perm[r]
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut perm: Vec<usize> = (0..200).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let mut inverse = vec![0; 200];
        for (r, &old) in perm.iter().enumerate() {
            inverse[old] = r;
        }
        let permuted = data.select_rows(&perm);
        let pdesign = expand(&permuted, &grid).unwrap();
        let psubs: Vec<Vec<usize>> = subs
            .iter()
            .map(|s| s.iter().map(|&old| inverse[old]).collect())
            .collect();

        let (a, _, _) = stability_from_subsamples(&design, data.outcome(), &w, &rule, &subs).unwrap();
        let (b, _, _) =
            stability_from_subsamples(&pdesign, permuted.outcome(), &w, &rule, &psubs).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ebic_prefers_the_sparse_model_on_ties() {
        assert!(ebic(10.0, 0, 100, 20, 1.0) < ebic(10.0, 1, 100, 20, 1.0));
    }
}
