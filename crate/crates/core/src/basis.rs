//! Candidate cutpoint grids and the piecewise-constant indicator design.
//!
//! Every predictor `x_j` is expanded into indicator columns `1{x_j > q_j^k}`, one
//! per candidate cutpoint `q_j^1 < … < q_j^K`. A linear combination of those
//! columns is a step function in `x_j` that jumps by `β_j^k` when crossing
//! `q_j^k`, so selecting a nonzero coefficient is the same as selecting a cutoff.
//!
//! Because the indicators of one predictor are nested (`x > q^{k+1}` implies
//! `x > q^k`), the design stores, besides the sparse column supports, a per-row
//! *level*: the number of cutpoints of predictor `j` lying strictly below
//! `x_ij`. Row `i` has ones in exactly the first `level` columns of block `j`.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The 19 vigintile levels 5, 10, …, 95.
pub fn vigintiles() -> Vec<f64> {
    (1..20).map(|k| 5.0 * k as f64).collect()
}

/// An `n × p` table of continuous predictors with a binary outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    outcome: Vec<u8>,
    names: Vec<String>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, outcome: Vec<u8>, names: Vec<String>) -> Result<Self> {
        let (n, p) = features.dim();
        if outcome.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows but {} outcomes",
                n,
                outcome.len()
            )));
        }
        if names.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "{} feature columns but {} names",
                p,
                names.len()
            )));
        }
        if p == 0 {
            return Err(Error::InvalidData("dataset has no predictors".into()));
        }
        let bad: Vec<usize> = (0..n).filter(|&i| outcome[i] > 1).collect();
        if !bad.is_empty() {
            return Err(Error::InvalidOutcome { rows: bad });
        }
        if let Some(((i, j), _)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite value at row {i}, predictor `{}`",
                names[j]
            )));
        }
        Ok(Dataset {
            features,
            outcome,
            names,
        })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.features.column(j)
    }

    pub fn outcome(&self) -> &[u8] {
        &self.outcome
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn predictor_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Number of `(y = 0, y = 1)` rows.
    pub fn class_counts(&self) -> (usize, usize) {
        class_counts(&self.outcome)
    }

    /// Rows in the given order; indices may repeat.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let features = self.features.select(ndarray::Axis(0), rows);
        let outcome = rows.iter().map(|&i| self.outcome[i]).collect();
        Dataset {
            features,
            outcome,
            names: self.names.clone(),
        }
    }
}

pub(crate) fn class_counts(y: &[u8]) -> (usize, usize) {
    let n1 = y.iter().filter(|&&v| v == 1).count();
    (y.len() - n1, n1)
}

/// How a predictor's candidate cutpoints are derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridSpec {
    /// Empirical quantiles at the given percentile levels (0–100).
    Percentile { levels: Vec<f64> },
    /// Fixed values; those outside the open data range are dropped.
    Explicit { values: Vec<f64> },
    /// `count` equally spaced points strictly inside the observed range.
    Uniform { count: usize },
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Percentile {
            levels: vigintiles(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridStrategy {
    Percentile,
    Explicit,
    Uniform,
}

impl GridSpec {
    pub fn strategy(&self) -> GridStrategy {
        match self {
            GridSpec::Percentile { .. } => GridStrategy::Percentile,
            GridSpec::Explicit { .. } => GridStrategy::Explicit,
            GridSpec::Uniform { .. } => GridStrategy::Uniform,
        }
    }
}

/// Linearly interpolated quantile between order statistics, with
/// `h = (n - 1) · level / 100` (the "type 7" rule). `sorted` must be ascending
/// and non-empty; `level` is clamped to `[0, 100]`.
pub fn quantile_sorted(sorted: &[f64], level: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * (level.clamp(0.0, 100.0) / 100.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn sorted_copy(x: &[f64]) -> Vec<f64> {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Candidate cutpoints for one predictor.
///
/// The result is strictly increasing and lies strictly inside the observed
/// range. Cutpoints that induce the same split of the data (no observation
/// between them) are collapsed to the lowest one.
pub fn build_cutpoint_grid(x: &[f64], spec: &GridSpec) -> Result<Vec<f64>> {
    build_named_grid("x", x, spec)
}

fn build_named_grid(name: &str, x: &[f64], spec: &GridSpec) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(Error::TooFewObservations {
            needed: 2,
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData(format!(
            "predictor `{name}` has non-finite values"
        )));
    }
    let sorted = sorted_copy(x);
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    if min == max {
        return Err(Error::DegeneratePredictor { name: name.into() });
    }

    let mut candidates: Vec<f64> = match spec {
        GridSpec::Percentile { levels } => {
            if levels.iter().any(|l| !(0.0..=100.0).contains(l)) {
                return Err(Error::Config(format!(
                    "percentile levels must lie in [0, 100], got {levels:?}"
                )));
            }
            levels.iter().map(|&l| quantile_sorted(&sorted, l)).collect()
        }
        GridSpec::Explicit { values } => values.clone(),
        GridSpec::Uniform { count } => (1..=*count)
            .map(|k| min + (max - min) * k as f64 / (*count as f64 + 1.0))
            .collect(),
    };
    candidates.retain(|q| q.is_finite() && *q > min && *q < max);
    candidates.sort_by(f64::total_cmp);

    // Collapse cutpoints that split the sample identically.
    let mut grid: Vec<f64> = Vec::with_capacity(candidates.len());
    let mut last_split = usize::MAX;
    for q in candidates {
        let below = sorted.partition_point(|&v| v <= q);
        if below != last_split {
            grid.push(q);
            last_split = below;
        }
    }
    if grid.is_empty() {
        return Err(Error::EmptyGrid { name: name.into() });
    }
    Ok(grid)
}

/// Candidate cutpoints of one predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorGrid {
    pub name: String,
    pub cutpoints: Vec<f64>,
    pub strategy: GridStrategy,
}

/// Ordered candidate cutpoints for every predictor of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutpointGrid {
    predictors: Vec<PredictorGrid>,
}

impl CutpointGrid {
    /// Validates monotonicity; the open-range condition is checked by [`expand`].
    pub fn new(predictors: Vec<PredictorGrid>) -> Result<Self> {
        for g in &predictors {
            if g.cutpoints.is_empty() {
                return Err(Error::EmptyGrid {
                    name: g.name.clone(),
                });
            }
            if g.cutpoints.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::Config(format!(
                    "cutpoints of `{}` are not strictly increasing",
                    g.name
                )));
            }
        }
        Ok(CutpointGrid { predictors })
    }

    /// Same spec for every predictor.
    pub fn build(data: &Dataset, spec: &GridSpec) -> Result<Self> {
        Self::build_with(data, |_| spec)
    }

    /// Per-predictor spec chosen by name.
    pub fn build_with<'s>(
        data: &Dataset,
        spec_for: impl Fn(&str) -> &'s GridSpec,
    ) -> Result<Self> {
        let predictors = data
            .names()
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let spec = spec_for(name);
                let x = data.column(j).to_vec();
                Ok(PredictorGrid {
                    name: name.clone(),
                    cutpoints: build_named_grid(name, &x, spec)?,
                    strategy: spec.strategy(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CutpointGrid { predictors })
    }

    pub fn predictors(&self) -> &[PredictorGrid] {
        &self.predictors
    }

    pub fn len(&self) -> usize {
        self.predictors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictors.is_empty()
    }

    pub fn cutpoints(&self, j: usize) -> &[f64] {
        &self.predictors[j].cutpoints
    }

    /// Total number of indicator columns, `Σ_j K_j`.
    pub fn total_columns(&self) -> usize {
        self.predictors.iter().map(|g| g.cutpoints.len()).sum()
    }

    /// Index of the first column of predictor `j` in predictor-major order.
    pub fn column_offset(&self, j: usize) -> usize {
        self.predictors[..j]
            .iter()
            .map(|g| g.cutpoints.len())
            .sum()
    }

    /// `(predictor, cutpoint index, cutpoint)` for every column, predictor-major.
    pub fn column_keys(&self) -> Vec<ColumnKey> {
        self.predictors
            .iter()
            .enumerate()
            .flat_map(|(j, g)| {
                g.cutpoints.iter().enumerate().map(move |(k, &q)| ColumnKey {
                    predictor: j,
                    index: k,
                    cutpoint: q,
                })
            })
            .collect()
    }
}

/// Back-map from a design column to its predictor and cutpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnKey {
    pub predictor: usize,
    pub index: usize,
    pub cutpoint: f64,
}

/// The indicator expansion of a dataset under a cutpoint grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    n_rows: usize,
    /// `[first, end)` column ranges, one per predictor.
    blocks: Vec<(usize, usize)>,
    /// Predictor-major: `levels[j * n_rows + i]`.
    levels: Vec<u16>,
    /// Sorted row indices of the ones in each column.
    supports: Vec<Vec<u32>>,
    colmap: Vec<ColumnKey>,
    means: Vec<f64>,
}

/// Expands `data` into indicator columns `1{x_ij > q_j^k}`.
pub fn expand(data: &Dataset, grids: &CutpointGrid) -> Result<DesignMatrix> {
    let mut by_name: HashMap<&str, usize> = HashMap::new();
    for (j, name) in data.names().iter().enumerate() {
        by_name.insert(name.as_str(), j);
    }
    for g in grids.predictors() {
        if !by_name.contains_key(g.name.as_str()) {
            return Err(Error::UnknownPredictor(g.name.clone()));
        }
    }
    if let Some(missing) = data
        .names()
        .iter()
        .find(|n| !grids.predictors().iter().any(|g| &g.name == *n))
    {
        return Err(Error::MissingGrid(missing.clone()));
    }

    let n = data.n();
    let mut levels = Vec::with_capacity(n * grids.len());
    for g in grids.predictors() {
        if g.cutpoints.len() > u16::MAX as usize {
            return Err(Error::Config(format!("too many cutpoints for `{}`", g.name)));
        }
        let x = data.column(by_name[g.name.as_str()]);
        levels.extend(
            x.iter()
                .map(|&v| g.cutpoints.partition_point(|&q| q < v) as u16),
        );
    }
    Ok(DesignMatrix::from_levels(n, grids.column_keys(), levels))
}

impl DesignMatrix {
    fn from_levels(n_rows: usize, colmap: Vec<ColumnKey>, levels: Vec<u16>) -> Self {
        let mut blocks = Vec::new();
        let mut start = 0;
        while start < colmap.len() {
            let j = colmap[start].predictor;
            let end = start
                + colmap[start..]
                    .iter()
                    .take_while(|c| c.predictor == j)
                    .count();
            blocks.push((start, end));
            start = end;
        }

        let mut supports: Vec<Vec<u32>> = vec![Vec::new(); colmap.len()];
        for (j, &(first, _)) in blocks.iter().enumerate() {
            let lv = &levels[j * n_rows..(j + 1) * n_rows];
            for (i, &l) in lv.iter().enumerate() {
                for col in &mut supports[first..first + l as usize] {
                    col.push(i as u32);
                }
            }
        }
        let means = supports
            .iter()
            .map(|s| {
                if n_rows == 0 {
                    0.0
                } else {
                    s.len() as f64 / n_rows as f64
                }
            })
            .collect();
        DesignMatrix {
            n_rows,
            blocks,
            levels,
            supports,
            colmap,
            means,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.colmap.len()
    }

    pub fn n_predictors(&self) -> usize {
        self.blocks.len()
    }

    pub fn colmap(&self) -> &[ColumnKey] {
        &self.colmap
    }

    /// Column range of predictor block `j`.
    pub fn block(&self, j: usize) -> std::ops::Range<usize> {
        let (a, b) = self.blocks[j];
        a..b
    }

    /// Block holding column `c`.
    pub fn block_of(&self, c: usize) -> usize {
        self.blocks.partition_point(|&(_, end)| end <= c)
    }

    /// Number of leading ones of row `i` within each block, for block `j`.
    pub fn levels(&self, j: usize) -> &[u16] {
        &self.levels[j * self.n_rows..(j + 1) * self.n_rows]
    }

    /// Rows where column `c` equals one.
    pub fn support(&self, c: usize) -> &[u32] {
        &self.supports[c]
    }

    /// Empirical column means, `|support| / n`.
    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn get(&self, i: usize, c: usize) -> bool {
        self.supports[c].binary_search(&(i as u32)).is_ok()
    }

    pub fn nnz(&self) -> usize {
        self.supports.iter().map(Vec::len).sum()
    }

    /// Dense 0/1 copy, mainly for inspection and tests.
    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows, self.n_cols()));
        for (c, s) in self.supports.iter().enumerate() {
            for &i in s {
                out[[i as usize, c]] = 1.0;
            }
        }
        out
    }

    /// The design restricted to `rows`, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> DesignMatrix {
        let m = rows.len();
        let mut levels = Vec::with_capacity(m * self.blocks.len());
        for j in 0..self.blocks.len() {
            let lv = self.levels(j);
            levels.extend(rows.iter().map(|&i| lv[i]));
        }
        DesignMatrix::from_levels(m, self.colmap.clone(), levels)
    }

    /// The design restricted to the (ascending) columns `cols`. Predictors
    /// left without a column are dropped.
    pub fn select_columns(&self, cols: &[usize]) -> DesignMatrix {
        debug_assert!(cols.windows(2).all(|w| w[0] < w[1]), "columns must ascend");
        let mut levels = Vec::new();
        let mut colmap = Vec::with_capacity(cols.len());
        for j in 0..self.blocks.len() {
            let r = self.block(j);
            let kept: Vec<usize> = cols
                .iter()
                .filter(|c| r.contains(c))
                .map(|c| c - r.start)
                .collect();
            if kept.is_empty() {
                continue;
            }
            colmap.extend(kept.iter().map(|&k| self.colmap[r.start + k]));
            // New level = number of kept columns whose index is below the old level.
            let mut remap = vec![0u16; r.len() + 1];
            for (l, slot) in remap.iter_mut().enumerate() {
                *slot = kept.iter().take_while(|&&k| k < l).count() as u16;
            }
            levels.extend(self.levels(j).iter().map(|&l| remap[l as usize]));
        }
        DesignMatrix::from_levels(self.n_rows, colmap, levels)
    }

    /// Linear predictor `β_0 + Σ_c χ_ic β_c` for every row.
    pub fn linear_predictor(&self, intercept: f64, beta: &[f64]) -> Vec<f64> {
        assert_eq!(beta.len(), self.n_cols(), "coefficient length mismatch");
        let mut eta = vec![intercept; self.n_rows];
        for (c, s) in self.supports.iter().enumerate() {
            let b = beta[c];
            if b != 0.0 {
                for &i in s {
                    eta[i as usize] += b;
                }
            }
        }
        eta
    }
}

/// A step function `f(x) = levels[m]` where `m` is the number of breakpoints
/// strictly below `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    pub breakpoints: Vec<f64>,
    /// One more entry than `breakpoints`; `levels[0] = 0`.
    pub levels: Vec<f64>,
}

impl StepFunction {
    pub fn eval(&self, x: f64) -> f64 {
        self.levels[self.breakpoints.partition_point(|&b| b < x)]
    }

    pub fn is_zero(&self) -> bool {
        self.breakpoints.is_empty()
    }
}

/// The fitted additive component `f̂_j` of predictor `j`.
///
/// Jumps occur only at cutpoints with a nonzero coefficient, and the function
/// is zero to the left of every cutpoint.
pub fn fitted_function(coefficients: &[f64], grids: &CutpointGrid, j: usize) -> Result<StepFunction> {
    if coefficients.len() != grids.total_columns() {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients for a grid with {} columns",
            coefficients.len(),
            grids.total_columns()
        )));
    }
    if j >= grids.len() {
        return Err(Error::DimensionMismatch(format!(
            "predictor {j} out of range (grid has {})",
            grids.len()
        )));
    }
    let offset = grids.column_offset(j);
    let mut breakpoints = Vec::new();
    let mut levels = vec![0.0];
    let mut level = 0.0;
    for (k, &q) in grids.cutpoints(j).iter().enumerate() {
        let b = coefficients[offset + k];
        if b != 0.0 {
            level += b;
            breakpoints.push(q);
            levels.push(level);
        }
    }
    Ok(StepFunction {
        breakpoints,
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Sort, then read the two neighbouring order statistics by index.
    fn brute_quantile(x: &[f64], level: f64) -> f64 {
        let mut s = x.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pos = (s.len() - 1) as f64 * level / 100.0;
        let lo = pos as usize;
        if lo + 1 >= s.len() {
            return s[lo];
        }
        s[lo] * (1.0 - (pos - lo as f64)) + s[lo + 1] * (pos - lo as f64)
    }

    #[test]
    fn quartiles_of_one_to_hundred() {
        let x: Vec<f64> = (1..=100).map(f64::from).collect();
        let spec = GridSpec::Percentile {
            levels: vec![25.0, 50.0, 75.0],
        };
        let grid = build_cutpoint_grid(&x, &spec).unwrap();
        let oracle: Vec<f64> = [25.0, 50.0, 75.0]
            .iter()
            .map(|&l| brute_quantile(&x, l))
            .collect();
        assert_eq!(oracle, vec![25.75, 50.5, 75.25]);
        assert_eq!(grid, oracle);
    }

    #[test]
    fn constant_predictor_is_degenerate() {
        let x = [5.0; 4];
        for spec in [
            GridSpec::default(),
            GridSpec::Uniform { count: 3 },
            GridSpec::Explicit { values: vec![5.0] },
        ] {
            assert!(matches!(
                build_cutpoint_grid(&x, &spec),
                Err(Error::DegeneratePredictor { .. })
            ));
        }
    }

    #[test]
    fn binary_predictor_collapses_to_one_cutpoint() {
        let x: Vec<f64> = [0.0; 5].iter().chain([1.0; 5].iter()).copied().collect();
        let levels: Vec<f64> = (1..10).map(|k| 10.0 * k as f64).collect();
        // Enumerate the raw quantiles, keep those inside (0, 1), dedupe by split.
        let mut raw: Vec<f64> = levels.iter().map(|&l| brute_quantile(&x, l)).collect();
        raw.retain(|&q| q > 0.0 && q < 1.0);
        raw.dedup();
        assert_eq!(raw, vec![0.5]);
        let grid = build_cutpoint_grid(&x, &GridSpec::Percentile { levels }).unwrap();
        assert_eq!(grid, raw);
    }

    #[test]
    fn too_few_points_and_empty_grid() {
        assert!(matches!(
            build_cutpoint_grid(&[1.0], &GridSpec::default()),
            Err(Error::TooFewObservations { .. })
        ));
        let spec = GridSpec::Explicit {
            values: vec![-1.0, 10.0],
        };
        assert!(matches!(
            build_cutpoint_grid(&[0.0, 1.0, 2.0], &spec),
            Err(Error::EmptyGrid { .. })
        ));
    }

    #[test]
    fn extremes_are_dropped() {
        let spec = GridSpec::Percentile {
            levels: vec![0.0, 50.0, 100.0],
        };
        assert_eq!(build_cutpoint_grid(&[1.0, 2.0, 3.0], &spec).unwrap(), vec![2.0]);
        let uniform = build_cutpoint_grid(&[0.0, 1.0, 2.0, 3.0, 4.0], &GridSpec::Uniform { count: 3 }).unwrap();
        assert_eq!(uniform, vec![1.0, 2.0, 3.0]);
    }

    fn single(x: Vec<f64>, cuts: Vec<f64>) -> (Dataset, CutpointGrid) {
        let n = x.len();
        let data = Dataset::new(
            Array2::from_shape_vec((n, 1), x).unwrap(),
            vec![0; n],
            vec!["x".into()],
        )
        .unwrap();
        let grid = CutpointGrid::new(vec![PredictorGrid {
            name: "x".into(),
            cutpoints: cuts,
            strategy: GridStrategy::Explicit,
        }])
        .unwrap();
        (data, grid)
    }

    #[test]
    fn expand_small() {
        let (data, grid) = single(vec![1.0, 3.0, 5.0], vec![2.0, 4.0]);
        let d = expand(&data, &grid).unwrap();
        assert_eq!(d.to_dense(), array![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]);
        assert_eq!(d.support(0), &[1, 2]);
        assert_eq!(d.support(1), &[2]);
        assert_eq!(d.means(), &[2.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(d.nnz(), 3);
    }

    #[test]
    fn expand_rejects_unknown_and_missing_predictors() {
        let (data, _) = single(vec![1.0, 3.0, 5.0], vec![2.0]);
        let other = CutpointGrid::new(vec![PredictorGrid {
            name: "y".into(),
            cutpoints: vec![2.0],
            strategy: GridStrategy::Explicit,
        }])
        .unwrap();
        assert!(matches!(expand(&data, &other), Err(Error::UnknownPredictor(_))));
        let empty = CutpointGrid::new(vec![]).unwrap();
        assert!(matches!(expand(&data, &empty), Err(Error::MissingGrid(_))));
    }

    fn random_dataset(seed: u64, n: usize, p: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, p), |(_, j)| {
            // A few tied values on the last predictor.
            if j + 1 == p {
                rng.gen_range(0..6) as f64
            } else {
                rng.gen::<f64>() * 10.0
            }
        });
        let y = (0..n).map(|_| rng.gen_range(0..2u8)).collect();
        Dataset::new(x, y, (0..p).map(|j| format!("x{j}")).collect()).unwrap()
    }

    #[test]
    fn expansion_matches_dense_double_loop() {
        let data = random_dataset(11, 50, 3);
        let grid = CutpointGrid::build(&data, &GridSpec::default()).unwrap();
        let d = expand(&data, &grid).unwrap();

        let keys = grid.column_keys();
        let mut oracle = Array2::<f64>::zeros((50, keys.len()));
        for i in 0..50 {
            for (c, key) in keys.iter().enumerate() {
                if data.features()[[i, key.predictor]] > key.cutpoint {
                    oracle[[i, c]] = 1.0;
                }
            }
        }
        assert_eq!(d.to_dense(), oracle);
        assert_eq!(d.colmap(), keys.as_slice());
        for c in 0..d.n_cols() {
            let s = d.support(c).len();
            assert!(s > 0 && s < 50, "column {c} is constant");
        }
    }

    #[test]
    fn fitted_function_cumulates_jumps() {
        let grid = CutpointGrid::new(vec![PredictorGrid {
            name: "x".into(),
            cutpoints: vec![1.0, 2.0, 3.0],
            strategy: GridStrategy::Explicit,
        }])
        .unwrap();
        let f = fitted_function(&[0.5, 0.0, -0.2], &grid, 0).unwrap();
        assert_eq!(f.breakpoints, vec![1.0, 3.0]);
        assert_eq!(f.eval(0.0), 0.0);
        assert_eq!(f.eval(1.0), 0.0);
        assert_eq!(f.eval(1.5), 0.5);
        assert_eq!(f.eval(3.0), 0.5);
        assert!((f.eval(3.5) - 0.3).abs() < 1e-15);

        let zero = fitted_function(&[0.0; 3], &grid, 0).unwrap();
        assert!(zero.is_zero());
        assert_eq!(zero.eval(100.0), 0.0);

        assert!(fitted_function(&[0.0; 2], &grid, 0).is_err());
        assert!(fitted_function(&[0.0; 3], &grid, 1).is_err());
    }

    #[test]
    fn select_rows_matches_reexpansion() {
        let data = random_dataset(3, 40, 2);
        let grid = CutpointGrid::build(&data, &GridSpec::default()).unwrap();
        let d = expand(&data, &grid).unwrap();
        let rows = [5, 1, 1, 39, 0, 17];
        let sub = d.select_rows(&rows);
        let direct = expand(&data.select_rows(&rows), &grid).unwrap();
        assert_eq!(sub, direct);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn nested_supports_and_reconstruction(seed in 0u64..10_000, n in 5usize..60, p in 1usize..4) {
            let data = random_dataset(seed, n, p);
            let grid = match CutpointGrid::build(&data, &GridSpec::default()) {
                Ok(g) => g,
                Err(_) => return Ok(()), // constant random column
            };
            let d = expand(&data, &grid).unwrap();
            prop_assert_eq!(&d, &expand(&data, &grid).unwrap());

            for j in 0..grid.len() {
                let r = d.block(j);
                for c in r.start..r.end - 1 {
                    let outer = d.support(c);
                    prop_assert!(d.support(c + 1).iter().all(|i| outer.binary_search(i).is_ok()));
                }
            }

            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            // Integer-valued coefficients keep both sides exact.
            let beta: Vec<f64> = (0..d.n_cols())
                .map(|_| if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(-8..=8) as f64 })
                .collect();
            let eta = d.linear_predictor(0.0, &beta);
            for i in 0..n {
                let total: f64 = (0..grid.len())
                    .map(|j| fitted_function(&beta, &grid, j).unwrap().eval(data.features()[[i, j]]))
                    .sum();
                prop_assert_eq!(total, eta[i]);
            }
        }

        #[test]
        fn invariant_under_monotone_relabeling(seed in 0u64..10_000, n in 5usize..40) {
            let data = random_dataset(seed, n, 1);
            let cuts = vec![2.5, 5.0, 7.5];
            let t = |v: f64| (v * 0.3).exp() - 4.0;
            let grid = |c: Vec<f64>| CutpointGrid::new(vec![PredictorGrid {
                name: "x0".into(), cutpoints: c, strategy: GridStrategy::Explicit,
            }]).unwrap();
            let raw = expand(&data, &grid(cuts.clone())).unwrap();
            let moved = Dataset::new(
                data.features().mapv(t), data.outcome().to_vec(), data.names().to_vec(),
            ).unwrap();
            let relabeled = expand(&moved, &grid(cuts.iter().map(|&c| t(c)).collect())).unwrap();
            prop_assert_eq!(raw.to_dense(), relabeled.to_dense());
        }
    }
}
