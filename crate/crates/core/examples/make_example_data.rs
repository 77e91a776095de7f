//! Regenerates `data/example.csv`: 200 synthetic CBC-like rows with a single
//! injected threshold effect on leukocytes above their 80th percentile.
//!
//! cargo run --example make_example_data > crates/core/data/example.csv

use cutpoint_select::basis::{quantile_sorted, Dataset};
use cutpoint_select::io::{write_dataset, CsvSchema};
use cutpoint_select::simulate::{calibrate_intercept, generate_outcomes, FeatureModel, TrueEffect};
use ndarray::Axis;

const COLUMNS: [&str; 6] = ["Hg", "P", "RDW-CV", "Le", "N%", "age"];
const ROWS: usize = 200;
const SEED: u64 = 20240611;

fn main() {
    let model = FeatureModel::cbc_default();
    let idx: Vec<usize> = COLUMNS.iter().map(|c| model.index_of(c).unwrap()).collect();
    // Two decimals, as an analyzer would print them.
    let features = model
        .generate(ROWS, SEED)
        .select(Axis(1), &idx)
        .mapv(|v| (v * 100.0).round() / 100.0);

    let le = 3;
    let mut col = features.column(le).to_vec();
    col.sort_by(f64::total_cmp);
    let effect = TrueEffect {
        predictor: le,
        cutoff: quantile_sorted(&col, 80.0),
        effect: 3.5,
    };
    let b0 = calibrate_intercept(features.view(), &[effect], 0.2).unwrap();
    let y = generate_outcomes(features.view(), &[effect], b0, SEED + 1);
    eprintln!("Le cutoff {} , {} events", effect.cutoff, y.iter().filter(|&&v| v == 1).count());

    let names = COLUMNS.iter().map(|s| s.to_string()).collect();
    let data = Dataset::new(features, y, names).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("example.csv");
    write_dataset(&path, &data, &CsvSchema::default()).unwrap();
    print!("{}", std::fs::read_to_string(path).unwrap());
}
