use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Marginal distribution of one synthetic predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    Normal { mean: f64, sd: f64 },
    LogNormal { mu: f64, sigma: f64 },
    /// Quantile table at equally spaced probabilities `0, 1/(m-1), …, 1`,
    /// linearly interpolated.
    Empirical { quantiles: Vec<f64> },
    /// 0/1 with `P(1) = p`.
    Bernoulli { p: f64 },
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

impl Marginal {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = match self {
            Marginal::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && *sd > 0.0,
            Marginal::LogNormal { mu, sigma } => mu.is_finite() && sigma.is_finite() && *sigma > 0.0,
            Marginal::Empirical { quantiles } => {
                quantiles.len() >= 2
                    && quantiles.iter().all(|q| q.is_finite())
                    && quantiles.windows(2).all(|w| w[0] <= w[1])
            }
            Marginal::Bernoulli { p } => *p > 0.0 && *p < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid marginal for `{name}`: {self:?}")))
        }
    }

    /// Maps a standard-normal copula draw to this marginal.
    pub fn transform(&self, z: f64) -> f64 {
        match self {
            Marginal::Normal { mean, sd } => mean + sd * z,
            Marginal::LogNormal { mu, sigma } => (mu + sigma * z).exp(),
            Marginal::Empirical { quantiles } => {
                let u = std_normal_cdf(z);
                let h = u * (quantiles.len() - 1) as f64;
                let lo = (h.floor() as usize).min(quantiles.len() - 2);
                let frac = h - lo as f64;
                quantiles[lo] + frac * (quantiles[lo + 1] - quantiles[lo])
            }
            Marginal::Bernoulli { p } => {
                if std_normal_cdf(z) > 1.0 - p {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorModel {
    pub name: String,
    pub marginal: Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawFeatureModel {
    predictors: Vec<PredictorModel>,
    correlation: Vec<Vec<f64>>,
}

/// Gaussian-copula model of `p` correlated predictors.
///
/// The correlation matrix is validated (symmetric, unit diagonal, positive
/// semi-definite) when the model is built, never at draw time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFeatureModel", into = "RawFeatureModel")]
pub struct FeatureModel {
    predictors: Vec<PredictorModel>,
    correlation: Vec<Vec<f64>>,
    factor: Vec<Vec<f64>>,
}

impl TryFrom<RawFeatureModel> for FeatureModel {
    type Error = Error;

    fn try_from(raw: RawFeatureModel) -> Result<Self> {
        FeatureModel::new(raw.predictors, raw.correlation)
    }
}

impl From<FeatureModel> for RawFeatureModel {
    fn from(m: FeatureModel) -> Self {
        RawFeatureModel {
            predictors: m.predictors,
            correlation: m.correlation,
        }
    }
}

/// Lower-triangular `L` with `L Lᵀ = a`, tolerating zero pivots so that
/// singular positive semi-definite matrices are accepted.
pub fn psd_cholesky(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let p = a.len();
    let tol = 1e-10;
    let mut l = vec![vec![0.0; p]; p];
    for j in 0..p {
        let d = a[j][j] - l[j][..j].iter().map(|v| v * v).sum::<f64>();
        if d < -tol {
            return Err(Error::NotPositiveSemiDefinite { pivot: j, value: d });
        }
        let d = d.max(0.0).sqrt();
        l[j][j] = d;
        for i in j + 1..p {
            let s = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if d > tol {
                l[i][j] = s / d;
            } else if s.abs() > 1e-8 {
                // A zero pivot forces the rest of the column to vanish.
                return Err(Error::NotPositiveSemiDefinite { pivot: j, value: 0.0 });
            }
        }
    }
    Ok(l)
}

impl FeatureModel {
    pub fn new(predictors: Vec<PredictorModel>, correlation: Vec<Vec<f64>>) -> Result<Self> {
        let p = predictors.len();
        if p == 0 {
            return Err(Error::Config("feature model has no predictors".into()));
        }
        if correlation.len() != p || correlation.iter().any(|r| r.len() != p) {
            return Err(Error::Config(format!("correlation matrix must be {p}×{p}")));
        }
        for pr in &predictors {
            pr.marginal.validate(&pr.name)?;
        }
        for i in 0..p {
            if (correlation[i][i] - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("correlation diagonal at {i} is not 1")));
            }
            for j in 0..i {
                let (a, b) = (correlation[i][j], correlation[j][i]);
                if !a.is_finite() || (a - b).abs() > 1e-12 || a.abs() > 1.0 {
                    return Err(Error::Config(format!(
                        "correlation entries ({i},{j}) invalid or asymmetric"
                    )));
                }
            }
        }
        let factor = psd_cholesky(&correlation)?;
        Ok(FeatureModel {
            predictors,
            correlation,
            factor,
        })
    }

    /// Builds the correlation matrix from factor loadings, `Λ Λᵀ` with a unit
    /// diagonal, which is positive semi-definite by construction.
    pub fn from_loadings(predictors: Vec<PredictorModel>, loadings: &[Vec<f64>]) -> Result<Self> {
        let p = predictors.len();
        let mut corr = vec![vec![0.0; p]; p];
        for i in 0..p {
            for j in 0..p {
                corr[i][j] = if i == j {
                    1.0
                } else {
                    loadings[i].iter().zip(&loadings[j]).map(|(a, b)| a * b).sum()
                };
            }
            let communality: f64 = loadings[i].iter().map(|v| v * v).sum();
            if communality > 1.0 {
                return Err(Error::Config(format!(
                    "loadings of `{}` exceed unit variance",
                    predictors[i].name
                )));
            }
        }
        FeatureModel::new(predictors, corr)
    }

    pub fn p(&self) -> usize {
        self.predictors.len()
    }

    pub fn predictors(&self) -> &[PredictorModel] {
        &self.predictors
    }

    pub fn names(&self) -> Vec<String> {
        self.predictors.iter().map(|p| p.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.predictors.iter().position(|p| p.name == name)
    }

    pub fn correlation(&self) -> &[Vec<f64>] {
        &self.correlation
    }

    /// A copy with the correlations of `relevant` replaced: `within` among
    /// them, `outside` between them and every other predictor.
    pub fn with_relevant_block(&self, relevant: &[usize], within: f64, outside: f64) -> Result<Self> {
        let mut corr = self.correlation.clone();
        let p = self.p();
        for &r in relevant {
            for o in 0..p {
                if o == r {
                    continue;
                }
                let v = if relevant.contains(&o) { within } else { outside };
                corr[r][o] = v;
                corr[o][r] = v;
            }
        }
        FeatureModel::new(self.predictors.clone(), corr)
    }

    /// Draws `n` rows: correlated standard normals through each marginal.
    pub fn generate(&self, n: usize, seed: u64) -> Array2<f64> {
        let p = self.p();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Array2::zeros((n, p));
        let mut e = vec![0.0; p];
        for i in 0..n {
            for v in e.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            for j in 0..p {
                let z: f64 = self.factor[j][..=j].iter().zip(&e).map(|(l, x)| l * x).sum();
                out[[i, j]] = self.predictors[j].marginal.transform(z);
            }
        }
        out
    }

    /// Twenty blood-count-like predictors with an erythroid block
    /// (Hg, Ht, Er), a leukocyte-count block, and anti-correlated
    /// neutrophil/lymphocyte percentages.
    pub fn cbc_default() -> Self {
        use Marginal::*;
        let ln = f64::ln;
        // Factors: erythroid, leukocyte count, differential %, red-cell
        // indices, eosinophil, basophil, monocyte, age.
        #[rustfmt::skip]
        let table: Vec<(&str, Marginal, [f64; 8])> = vec![
            ("Hg",     Normal { mean: 13.5, sd: 1.8 },              [0.95, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            ("Ht",     Normal { mean: 40.0, sd: 5.0 },              [0.95, 0.0, 0.0, 0.1, 0.0, 0.0, 0.0, 0.0]),
            ("MCHC",   Normal { mean: 33.5, sd: 1.2 },              [0.35, 0.0, 0.0, 0.4, 0.0, 0.0, 0.0, 0.0]),
            ("MCV",    Normal { mean: 89.0, sd: 6.0 },              [0.1, 0.0, 0.0, 0.8, 0.0, 0.0, 0.0, 0.1]),
            ("Er",     Normal { mean: 4.6, sd: 0.6 },               [0.85, 0.0, 0.0, -0.35, 0.0, 0.0, 0.0, 0.0]),
            ("P",      LogNormal { mu: ln(250.0), sigma: 0.35 },    [0.0, 0.15, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            ("RDW-CV", LogNormal { mu: ln(13.5), sigma: 0.12 },     [-0.3, 0.0, 0.0, -0.4, 0.0, 0.0, 0.0, 0.2]),
            ("Le",     LogNormal { mu: ln(7.5), sigma: 0.35 },      [0.0, 0.95, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            ("IG",     LogNormal { mu: ln(0.4), sigma: 0.6 },       [0.0, 0.35, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            ("N",      LogNormal { mu: ln(4.5), sigma: 0.45 },      [0.0, 0.9, 0.35, 0.0, 0.0, 0.0, 0.0, 0.0]),
            ("B",      LogNormal { mu: ln(0.04), sigma: 0.5 },      [0.0, 0.35, 0.0, 0.0, 0.0, 0.6, 0.0, 0.0]),
            ("Eo",     LogNormal { mu: ln(0.18), sigma: 0.7 },      [0.0, 0.3, 0.0, 0.0, 0.7, 0.0, 0.0, 0.0]),
            ("M",      LogNormal { mu: ln(0.55), sigma: 0.35 },     [0.0, 0.55, 0.0, 0.0, 0.0, 0.0, 0.6, 0.0]),
            ("Ly",     LogNormal { mu: ln(2.0), sigma: 0.4 },       [0.0, 0.3, -0.6, 0.0, 0.0, 0.0, 0.0, -0.2]),
            ("N%",     Normal { mean: 60.0, sd: 10.0 },             [0.0, 0.0, 0.85, 0.0, 0.0, 0.0, 0.0, 0.0]),
            ("B%",     LogNormal { mu: ln(0.5), sigma: 0.5 },       [0.0, 0.0, -0.2, 0.0, 0.0, 0.7, 0.0, 0.0]),
            ("Eo%",    LogNormal { mu: ln(2.5), sigma: 0.7 },       [0.0, 0.0, -0.3, 0.0, 0.8, 0.0, 0.0, 0.0]),
            ("M%",     Normal { mean: 7.5, sd: 2.0 },               [0.0, 0.0, -0.3, 0.0, 0.0, 0.0, 0.8, 0.0]),
            ("Ly%",    Normal { mean: 29.0, sd: 9.0 },              [0.0, 0.0, -0.85, 0.0, 0.0, 0.0, 0.0, -0.2]),
            ("age",    Empirical { quantiles: vec![18.0, 31.0, 44.0, 56.0, 66.0, 76.0, 95.0] },
                                                                    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.9]),
        ];
        let predictors = table
            .iter()
            .map(|(name, m, _)| PredictorModel {
                name: name.to_string(),
                marginal: m.clone(),
            })
            .collect();
        let loadings: Vec<Vec<f64>> = table.iter().map(|(_, _, l)| l.to_vec()).collect();
        FeatureModel::from_loadings(predictors, &loadings).expect("default model is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_corr(x: &Array2<f64>, a: usize, b: usize) -> f64 {
        let n = x.nrows() as f64;
        let (ca, cb) = (x.column(a), x.column(b));
        let (ma, mb) = (ca.sum() / n, cb.sum() / n);
        let cov: f64 = ca.iter().zip(cb.iter()).map(|(u, v)| (u - ma) * (v - mb)).sum();
        let va: f64 = ca.iter().map(|u| (u - ma).powi(2)).sum();
        let vb: f64 = cb.iter().map(|v| (v - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    fn std_normals(p: usize) -> Vec<PredictorModel> {
        (0..p)
            .map(|j| PredictorModel {
                name: format!("z{j}"),
                marginal: Marginal::Normal { mean: 0.0, sd: 1.0 },
            })
            .collect()
    }

    fn identity(p: usize) -> Vec<Vec<f64>> {
        (0..p).map(|i| (0..p).map(|j| f64::from(u8::from(i == j))).collect()).collect()
    }

    #[test]
    fn identity_copula_is_uncorrelated() {
        let m = FeatureModel::new(std_normals(3), identity(3)).unwrap();
        let x = m.generate(10_000, 1);
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            assert!(sample_corr(&x, a, b).abs() < 0.05);
        }
    }

    #[test]
    fn block_correlation_is_reproduced() {
        let m = FeatureModel::new(std_normals(2), vec![vec![1.0, 0.8], vec![0.8, 1.0]]).unwrap();
        let x = m.generate(10_000, 2);
        assert!((sample_corr(&x, 0, 1) - 0.8).abs() < 0.05);
    }

    #[test]
    fn empty_draw_and_determinism() {
        let m = FeatureModel::cbc_default();
        assert_eq!(m.generate(0, 3).dim(), (0, 20));
        assert_eq!(m.generate(50, 3), m.generate(50, 3));
        assert_ne!(m.generate(50, 3), m.generate(50, 4));
    }

    #[test]
    fn rejects_non_psd_and_malformed() {
        let bad = vec![
            vec![1.0, 0.9, -0.9],
            vec![0.9, 1.0, 0.9],
            vec![-0.9, 0.9, 1.0],
        ];
        assert!(matches!(
            FeatureModel::new(std_normals(3), bad),
            Err(Error::NotPositiveSemiDefinite { .. })
        ));
        let asym = vec![vec![1.0, 0.2], vec![0.3, 1.0]];
        assert!(FeatureModel::new(std_normals(2), asym).is_err());
        // Perfect correlation is singular but valid.
        let singular = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let m = FeatureModel::new(std_normals(2), singular).unwrap();
        let x = m.generate(100, 0);
        assert!(x.rows().into_iter().all(|r| (r[0] - r[1]).abs() < 1e-12));
    }

    #[test]
    fn empirical_and_bernoulli_marginals() {
        let emp = Marginal::Empirical { quantiles: vec![0.0, 10.0, 30.0] };
        assert_eq!(emp.transform(0.0), 10.0);
        assert!(emp.transform(-40.0) >= 0.0 && emp.transform(40.0) <= 30.0);
        let m = FeatureModel::new(
            vec![PredictorModel {
                name: "sex".into(),
                marginal: Marginal::Bernoulli { p: 0.3 },
            }],
            identity(1),
        )
        .unwrap();
        let x = m.generate(20_000, 5);
        let rate = x.sum() / 20_000.0;
        assert!((rate - 0.3).abs() < 0.015);
    }

    #[test]
    fn default_model_blocks() {
        let m = FeatureModel::cbc_default();
        let c = m.correlation();
        let (hg, ht, ns, ls) = (0, 1, m.index_of("N%").unwrap(), m.index_of("Ly%").unwrap());
        assert!(c[hg][ht] > 0.85);
        assert!(c[ns][ls] < -0.6);
        let json = serde_json::to_string(&m).unwrap();
        let back: FeatureModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }
}
