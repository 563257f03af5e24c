use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn modgp(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modgp"))
        .args(args)
        .env("MODGP_OUT_DIR", out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) {
    let o = modgp(out, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn data_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).map(String::from).collect()
}

fn toy(dir: &Path, case: &str, n: &str) -> PathBuf {
    ok(dir, &["gen-toy", "--case", case, "--n", n, "--seed", "0"]);
    dir.join(format!("{case}.csv"))
}

#[test]
fn gen_toy_writes_the_requested_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = toy(dir.path(), "heteroscedastic", "1000");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("# config_hash: "));
    // Header plus one row per point.
    assert_eq!(data_lines(&csv).len(), 1001);
    assert!(dir.path().join("manifest.toml").exists());
}

#[test]
fn train_then_rerun_from_manifest_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let csv = toy(dir.path(), "heteroscedastic", "120");
    let first = dir.path().join("first");
    let csv_s = csv.to_str().unwrap();
    ok(&first, &["train", "--model", "shgp", "--data", csv_s, "--preset", "toy", "--m", "8", "--iters", "40", "--batch", "64"]);
    for f in ["checkpoint.json", "loss_trace.csv", "timing.csv", "manifest.toml"] {
        assert!(first.join(f).exists(), "{f} missing");
    }
    assert_eq!(data_lines(&first.join("loss_trace.csv")).len(), 41);

    let second = dir.path().join("second");
    let manifest = first.join("manifest.toml");
    ok(&second, &["run", "--manifest", manifest.to_str().unwrap()]);
    assert_eq!(std::fs::read(first.join("loss_trace.csv")).unwrap(), std::fs::read(second.join("loss_trace.csv")).unwrap());
    assert_eq!(std::fs::read(&manifest).unwrap(), std::fs::read(second.join("manifest.toml")).unwrap());

    let hash_line = std::fs::read_to_string(first.join("loss_trace.csv")).unwrap().lines().next().unwrap().to_string();
    let ck = std::fs::read_to_string(first.join("checkpoint.json")).unwrap();
    let hash = hash_line.trim_start_matches("# config_hash: ");
    assert!(ck.contains(&format!("\"config_hash\": \"{hash}\"")));
}

#[test]
fn predict_and_evaluate_from_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let csv = toy(dir.path(), "heteroscedastic", "100");
    let csv_s = csv.to_str().unwrap();
    let run = dir.path().join("run");
    ok(&run, &["train", "--model", "shgp", "--data", csv_s, "--m", "6", "--iters", "20"]);
    let ck = run.join("checkpoint.json");
    let ck_s = ck.to_str().unwrap();

    let pred = dir.path().join("pred");
    ok(&pred, &["predict", "--checkpoint", ck_s, "--grid", "-2,2,25", "--samples", "30"]);
    assert_eq!(data_lines(&pred.join("predict_y_samples.csv")).len(), 1 + 25 * 30);
    let curves = data_lines(&pred.join("predict_curves.csv"));
    assert_eq!(curves[0], "x,sample_mean,sample_std,noise_std,w_mean,w_lower,w_upper");
    assert!(pred.join("predict.columns.txt").exists());

    let eval = dir.path().join("eval");
    ok(&eval, &["evaluate", "--checkpoint", ck_s, "--data", csv_s, "--samples", "50"]);
    let report = data_lines(&eval.join("nll_report.csv"));
    assert_eq!(report[0], "dataset,model,seed,mean_nll,units,config_hash");
    assert!(report[1].starts_with("heteroscedastic,shgp,0,"));
}

#[test]
fn benchmark_reports_one_row_per_split() {
    let dir = tempfile::tempdir().unwrap();
    let csv = toy(dir.path(), "moon", "80");
    let out = dir.path().join("bench");
    let args = ["benchmark", "--model", "svgp", "--data", csv.to_str().unwrap(), "--m", "5", "--iters", "15", "--splits", "3"];
    ok(&out, &[&args[..], &["--threads", "2", "--samples", "20"]].concat());
    assert_eq!(data_lines(&out.join("nll_report.csv")).len(), 4);
    assert_eq!(data_lines(&out.join("summary.csv")).len(), 2);

    let grid = dir.path().join("grid");
    let slgp = ["benchmark", "--model", "slgp", "--data", csv.to_str().unwrap(), "--m", "5", "--iters", "5", "--splits", "1"];
    ok(&grid, &[&slgp[..], &["--hidden", "4", "--samples", "20", "--beta-grid"]].concat());
    let rows = data_lines(&grid.join("summary.csv"));
    assert_eq!(rows.len(), 5);
    assert!(rows[4].starts_with("moon,slgp,0.01,1,"));
}

#[test]
fn validation_failures_exit_with_status_one() {
    let dir = tempfile::tempdir().unwrap();
    let csv = toy(dir.path(), "step", "50");
    let csv_s = csv.to_str().unwrap();
    let out = dir.path().join("x");
    let cases: [&[&str]; 5] = [
        &["train", "--model", "svgp", "--data", csv_s, "--bogus-flag"],
        &["train", "--model", "nope", "--data", csv_s],
        &["train", "--model", "slgp", "--data", csv_s, "--beta", "2"],
        &["train", "--model", "svgp", "--data", "/definitely/not/here.csv"],
        &["train", "--model", "svgp", "--data", csv_s, "--lr", "-1"],
    ];
    for args in cases {
        let o = modgp(&out, args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(modgp(&out, &["--help"]).status.code(), Some(0));
}

#[test]
fn numerical_abort_exits_with_status_two_and_keeps_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let csv = toy(dir.path(), "heteroscedastic", "60");
    let out = dir.path().join("boom");
    // A huge step size sends the parameters to infinity within a few steps.
    let o = modgp(&out, &["train", "--model", "svgp", "--data", csv.to_str().unwrap(), "--m", "5", "--iters", "500", "--lr", "1e200"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("checkpoint.json").exists());
    assert!(out.join("loss_trace.csv").exists());
}
