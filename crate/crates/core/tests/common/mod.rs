//! Shared fixtures: random small instances and an independent dense Newton
//! solver for the unpenalized weighted logistic MLE.
#![allow(dead_code)]

use cutpoint_select::basis::{expand, CutpointGrid, Dataset, DesignMatrix, GridSpec};
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

pub struct Instance {
    pub data: Dataset,
    pub grid: CutpointGrid,
    pub design: DesignMatrix,
}

impl Instance {
    pub fn y(&self) -> &[u8] {
        self.data.outcome()
    }

    /// Dense design with a leading column of ones.
    pub fn dense_with_intercept(&self) -> DMatrix<f64> {
        let x = self.design.to_dense();
        let (n, p) = x.dim();
        DMatrix::from_fn(n, p + 1, |i, c| if c == 0 { 1.0 } else { x[[i, c - 1]] })
    }
}

/// A random instance with `n ≤ 500` rows and at most 30 indicator columns,
/// outcome drawn from a step-function logistic model.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(150..=500);
    let p = rng.gen_range(1..=3);
    let k = rng.gen_range(2..=(30 / p).min(10));
    let mut x = Array2::zeros((n, p));
    for v in x.iter_mut() {
        *v = (rng.gen::<f64>() * 1000.0).round() / 100.0;
    }
    let jumps: Vec<(usize, f64, f64)> = (0..p)
        .map(|j| (j, rng.gen_range(2.0..8.0), rng.gen_range(-1.2..1.2)))
        .collect();
    let y: Vec<u8> = (0..n)
        .map(|i| {
            let eta = -0.8 + jumps
                .iter()
                .map(|&(j, q, b)| if x[[i, j]] > q { b } else { 0.0 })
                .sum::<f64>();
            u8::from(rng.gen::<f64>() < 1.0 / (1.0 + (-eta).exp()))
        })
        .collect();
    let names = (0..p).map(|j| format!("x{j}")).collect();
    let data = Dataset::new(x, y, names).expect("valid instance");
    let levels = (1..=k).map(|i| 100.0 * i as f64 / (k + 1) as f64).collect();
    let grid = CutpointGrid::build(&data, &GridSpec::Percentile { levels }).expect("grid");
    let design = expand(&data, &grid).expect("design");
    Instance { data, grid, design }
}

fn nll(x: &DMatrix<f64>, y: &[u8], w: &[f64], theta: &DVector<f64>) -> f64 {
    let eta = x * theta;
    eta.iter()
        .zip(y)
        .zip(w)
        .map(|((&e, &yi), &wi)| wi * ((e.max(0.0) + (-e.abs()).exp().ln_1p()) - f64::from(yi) * e))
        .sum()
}

/// Damped Newton on the weighted log-likelihood. `x` carries its own
/// intercept column. Returns `None` if the iteration heads off to infinity
/// (separation) or fails to reach a gradient of `1e-11` relative to the total weight.
pub fn newton_mle(x: &DMatrix<f64>, y: &[u8], w: &[f64]) -> Option<DVector<f64>> {
    let (n, p) = x.shape();
    let scale: f64 = w.iter().sum();
    let mut theta = DVector::zeros(p);
    let mut f = nll(x, y, w, &theta);
    for _ in 0..200 {
        let eta = x * &theta;
        let mut grad = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        for i in 0..n {
            let pi = 1.0 / (1.0 + (-eta[i]).exp());
            let row = x.row(i).transpose();
            grad += &row * (w[i] * (pi - f64::from(y[i])));
            hess += &row * row.transpose() * (w[i] * pi * (1.0 - pi));
        }
        if grad.amax() <= 1e-11 * scale {
            // Very large coefficients mean a (quasi-)separated draw whose
            // likelihood keeps improving towards infinity.
            return (theta.amax() < 12.0).then_some(theta);
        }
        let step = hess.cholesky()?.solve(&grad);
        let mut t = 1.0;
        loop {
            let cand = &theta - &step * t;
            let fc = nll(x, y, w, &cand);
            if fc <= f - 1e-4 * t * grad.dot(&step) || t < 1e-10 {
                theta = cand;
                f = fc;
                break;
            }
            t *= 0.5;
        }
        if theta.amax() > 30.0 {
            return None;
        }
    }
    None
}

/// Validates `value` against the subset of JSON Schema used by the bundled
/// report schema: `type`, `properties`, `required`, `additionalProperties:
/// false`, `items`, `enum`, `minimum`, `maximum`, and local `$ref`s into
/// `definitions`. Returns the paths of all violations.
pub fn schema_errors(schema: &Value, value: &Value) -> Vec<String> {
    let mut errors = Vec::new();
    check(schema, schema, value, "$", &mut errors);
    errors
}

fn check(root: &Value, schema: &Value, value: &Value, at: &str, errors: &mut Vec<String>) {
    if let Some(r) = schema.get("$ref").and_then(Value::as_str) {
        let target = r
            .strip_prefix("#/definitions/")
            .and_then(|name| root.get("definitions")?.get(name));
        match target {
            Some(s) => check(root, s, value, at, errors),
            None => errors.push(format!("{at}: unresolved $ref {r}")),
        }
        return;
    }
    if let Some(t) = schema.get("type") {
        let allowed: Vec<&str> = match t {
            Value::String(s) => vec![s.as_str()],
            Value::Array(a) => a.iter().filter_map(Value::as_str).collect(),
            _ => Vec::new(),
        };
        let ok = allowed.iter().any(|&t| match t {
            "object" => value.is_object(),
            "array" => value.is_array(),
            "string" => value.is_string(),
            "number" => value.is_number(),
            "integer" => value.is_u64() || value.is_i64(),
            "boolean" => value.is_boolean(),
            "null" => value.is_null(),
            _ => false,
        });
        if !ok {
            errors.push(format!("{at}: expected {allowed:?}, found {value}"));
            return;
        }
    }
    if let Some(options) = schema.get("enum").and_then(Value::as_array) {
        if !options.contains(value) {
            errors.push(format!("{at}: {value} not in enum"));
        }
    }
    if let Some(v) = value.as_f64() {
        if schema.get("minimum").and_then(Value::as_f64).is_some_and(|m| v < m) {
            errors.push(format!("{at}: {v} below minimum"));
        }
        if schema.get("maximum").and_then(Value::as_f64).is_some_and(|m| v > m) {
            errors.push(format!("{at}: {v} above maximum"));
        }
    }
    if let Some(obj) = value.as_object() {
        for key in schema.get("required").and_then(Value::as_array).into_iter().flatten() {
            if let Some(k) = key.as_str() {
                if !obj.contains_key(k) {
                    errors.push(format!("{at}: missing `{k}`"));
                }
            }
        }
        let props = schema.get("properties").and_then(Value::as_object);
        for (k, v) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(s) => check(root, s, v, &format!("{at}.{k}"), errors),
                None if schema.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    errors.push(format!("{at}: unexpected `{k}`"))
                }
                None => {}
            }
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), value.as_array()) {
        for (i, v) in arr.iter().enumerate() {
            check(root, items, v, &format!("{at}[{i}]"), errors);
        }
    }
}
