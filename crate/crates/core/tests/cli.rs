use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const STAMP: &str = "2026-01-01T00:00:00Z";

fn example() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/example.csv")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cutpoint-select"))
        .args(args)
        .env_remove("CUTPOINT_SELECT_WORKERS")
        .output()
        .expect("binary runs")
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exited normally")
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn missing_input_is_a_data_error() {
    let out = tempfile::tempdir().unwrap();
    let o = out.path().to_str().unwrap();
    assert_eq!(code(&["stability", "--input", "/no/such/file.csv", "--out", o, "--seed", "1"]), 2);
}

#[test]
fn bad_configuration_exits_one() {
    let out = tempfile::tempdir().unwrap();
    let o = out.path().to_str().unwrap();
    let input = example();
    let i = input.to_str().unwrap();
    assert_eq!(code(&["stability", "--input", i, "--out", o, "--threshold", "1.01"]), 1);
    assert_eq!(code(&["simulate", "--scenario", "Z", "--out", o, "--seed", "1"]), 1);
    assert_eq!(code(&["stability", "--input", i, "--out", o, "--omega", "0.5"]), 1);
    assert_eq!(code(&["stability", "--input", i, "--out", o, "--workers", "0"]), 1);
    assert_eq!(code(&["fit", "--out", o, "--seed", "1"]), 1);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["--help"]), 0);

    let cfg = out.path().join("bad.toml");
    fs::write(&cfg, "[stability]\nsubsample = 3\n").unwrap();
    assert_eq!(code(&["stability", "--input", i, "--out", o, "--config", cfg.to_str().unwrap()]), 1);
}

#[test]
fn fit_path_starts_empty() {
    let out = tempfile::tempdir().unwrap();
    let input = example();
    let args = ["fit", "--input", input.to_str().unwrap(), "--out", out.path().to_str().unwrap(), "--seed", "3"];
    assert_eq!(code(&args), 0);
    let rows = read_csv(&out.path().join("coefficient_path.csv"));
    let lambda_max = &rows[0][0];
    let at_max: Vec<_> = rows.iter().filter(|r| &r[0] == lambda_max).collect();
    assert_eq!(at_max.len(), 1);
    assert_eq!(at_max[0][1], "(intercept)");
    assert!(rows.iter().any(|r| r[1] == "Le"));
}

#[test]
fn injected_cutoff_tops_the_stability_table() {
    let out = tempfile::tempdir().unwrap();
    let input = example();
    let args = [
        "stability", "--input", input.to_str().unwrap(), "--out", out.path().to_str().unwrap(),
        "--seed", "42", "--subsamples", "50",
    ];
    assert_eq!(code(&args), 0);
    let mut rows = read_csv(&out.path().join("selection_probabilities.csv"));
    rows.sort_by(|a, b| b[2].parse::<f64>().unwrap().total_cmp(&a[2].parse().unwrap()));
    assert_eq!(rows[0][0], "Le");
    let cut: f64 = rows[0][1].parse().unwrap();
    assert!((cut - 10.074).abs() < 1e-9, "top cutpoint {cut}");
    let cutoffs = read_csv(&out.path().join("cutoffs.csv"));
    assert_eq!(cutoffs[0][0], "Le");
}

#[test]
fn single_subsample_gives_zero_one_probabilities() {
    let out = tempfile::tempdir().unwrap();
    let input = example();
    let args = [
        "stability", "--input", input.to_str().unwrap(), "--out", out.path().to_str().unwrap(),
        "--seed", "8", "--subsamples", "1",
    ];
    assert_eq!(code(&args), 0);
    let rows = read_csv(&out.path().join("selection_probabilities.csv"));
    assert!(rows.iter().all(|r| r[2] == "0" || r[2] == "1"));
    assert!(rows.iter().any(|r| r[2] == "1"));
}

#[test]
fn simulate_smoke() {
    let out = tempfile::tempdir().unwrap();
    let args = [
        "simulate", "--scenario", "B", "--replications", "5", "--seed", "7",
        "--subsamples", "20", "--out", out.path().to_str().unwrap(),
    ];
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut files: Vec<String> = fs::read_dir(out.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    assert_eq!(files, ["detection.csv", "mean_probabilities.csv", "mean_probabilities.svg", "report.json"]);
    let detection = read_csv(&out.path().join("detection.csv"));
    assert_eq!(detection.len(), 2);
}

#[test]
fn same_seed_and_timestamp_give_identical_bytes() {
    let input = example();
    for cmd in ["fit", "stability"] {
        let out = tempfile::tempdir().unwrap();
        let args = [
            cmd, "--input", input.to_str().unwrap(), "--out", out.path().to_str().unwrap(),
            "--seed", "42", "--subsamples", "20", "--timestamp", STAMP,
        ];
        let snapshot = || {
            assert_eq!(code(&args), 0);
            let mut files: Vec<(PathBuf, Vec<u8>)> = fs::read_dir(out.path())
                .unwrap()
                .map(|e| {
                    let p = e.unwrap().path();
                    let bytes = fs::read(&p).unwrap();
                    (p, bytes)
                })
                .collect();
            files.sort();
            files
        };
        let first = snapshot();
        let second = snapshot();
        assert_eq!(first.len(), second.len());
        for (a, b) in first.iter().zip(&second) {
            assert!(a == b, "{cmd}: {} differs", a.0.display());
        }
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let input = example();
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for (d, workers) in dirs.iter().zip(["1", "3"]) {
        let args = [
            "stability", "--input", input.to_str().unwrap(), "--out", d.path().to_str().unwrap(),
            "--seed", "5", "--subsamples", "12", "--workers", workers,
        ];
        assert_eq!(code(&args), 0);
    }
    let a = fs::read(dirs[0].path().join("selection_probabilities.csv")).unwrap();
    let b = fs::read(dirs[1].path().join("selection_probabilities.csv")).unwrap();
    assert!(a == b);
}
