use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn ssdl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssdl"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("failed to launch ssdl")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = ssdl(dir, args);
    assert!(
        out.status.success(),
        "ssdl {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn metric(stdout: &str, key: &str) -> f64 {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {stdout}"))
        .parse()
        .unwrap()
}

/// Small blob dataset: 3 classes of 15 in 5 dimensions, 40% labeled.
fn dataset() -> (TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_path_buf();
    ok(
        &dir,
        &[
            "synth", "--per-class", "15", "--dim", "5", "--spread", "0.2", "--seed", "7",
            "--features", "x.csv", "--truth", "y.txt", "--partial", "yp.txt",
        ],
    );
    (tmp, dir)
}

const FAST: &[&str] = &["--k-neighbors", "5", "--set", "max_outer=15", "--set", "max_iter=100"];

fn with_fast<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(FAST.iter().copied()).collect()
}

#[test]
fn synth_writes_data_labels_and_metadata() {
    let (_tmp, dir) = dataset();
    let truth = fs::read_to_string(dir.join("y.txt")).unwrap();
    assert_eq!(truth.lines().count(), 45);
    let partial = fs::read_to_string(dir.join("yp.txt")).unwrap();
    assert_eq!(partial.lines().filter(|l| l.trim() != "-1").count(), 18);
    let meta = fs::read_to_string(dir.join("x.csv.meta")).unwrap();
    assert!(meta.starts_with("command=synth\n"));
    assert!(meta.contains("config.seed=7\n"));
}

#[test]
fn pseudolabels_beat_the_uniform_predictor() {
    let (_tmp, dir) = dataset();
    let stdout = ok(
        &dir,
        &with_fast(&[
            "pseudolabel", "--features", "x.csv", "--labels", "yp.txt", "--truth", "y.txt",
            "--out", "f.csv", "--lambda-out", "lam.txt",
        ]),
    );
    assert!(metric(&stdout, "heldout_cross_entropy") < 3f64.ln());
    let f = fs::read_to_string(dir.join("f.csv")).unwrap();
    assert_eq!(f.lines().count(), 5);
    assert!(dir.join("lam.txt").exists());
    let meta = fs::read_to_string(dir.join("f.csv.meta")).unwrap();
    assert!(meta.contains("sigma="));
}

#[test]
fn zero_attention_skips_the_embedding() {
    let (_tmp, dir) = dataset();
    ok(
        &dir,
        &with_fast(&["pseudolabel", "--features", "x.csv", "--labels", "yp.txt", "--out", "a.csv", "--zero-lp"]),
    );
    let meta = fs::read_to_string(dir.join("a.csv.meta")).unwrap();
    assert!(meta.contains("plap=disabled"));
    let out = ssdl(
        &dir,
        &["pseudolabel", "--features", "x.csv", "--labels", "yp.txt", "--out", "b.csv", "--zero-lp", "--lambda-out", "l.txt"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_is_byte_reproducible_and_predicts_well() {
    let (_tmp, dir) = dataset();
    let train = |model: &str| {
        ok(&dir, &with_fast(&["train", "--features", "x.csv", "--labels", "yp.txt", "--model", model]));
    };
    train("m1.bin");
    train("m2.bin");
    let m1 = fs::read(dir.join("m1.bin")).unwrap();
    assert_eq!(m1, fs::read(dir.join("m2.bin")).unwrap());
    assert_eq!(
        fs::read(dir.join("m1.bin.trace.csv")).unwrap(),
        fs::read(dir.join("m2.bin.trace.csv")).unwrap()
    );

    let trace = fs::read_to_string(dir.join("m1.bin.trace.csv")).unwrap();
    let totals: Vec<f64> = trace
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(totals.windows(2).all(|w| w[1] <= w[0] + 1e-9));

    let stdout = ok(
        &dir,
        &["predict", "--model", "m1.bin", "--features", "x.csv", "--truth", "y.txt", "--out", "p.csv"],
    );
    assert!(metric(&stdout, "accuracy") >= 0.95);
    assert_eq!(fs::read_to_string(dir.join("p.csv")).unwrap().lines().count(), 46);

    let quiet = ok(&dir, &["predict", "--model", "m1.bin", "--features", "x.csv", "--out", "q.csv"]);
    assert!(quiet.is_empty());
}

#[test]
fn infinite_objective_tolerance_stops_after_one_iteration() {
    let (_tmp, dir) = dataset();
    ok(
        &dir,
        &with_fast(&["train", "--features", "x.csv", "--labels", "yp.txt", "--model", "m.bin", "--set", "obj_tol=inf"]),
    );
    let trace = fs::read_to_string(dir.join("m.bin.trace.csv")).unwrap();
    // Header, the initial objective and one outer iteration.
    assert_eq!(trace.lines().count(), 3);
}

#[test]
fn pseudolabel_file_can_feed_training() {
    let (_tmp, dir) = dataset();
    ok(&dir, &with_fast(&["pseudolabel", "--features", "x.csv", "--labels", "yp.txt", "--out", "f.csv"]));
    ok(
        &dir,
        &with_fast(&["train", "--features", "x.csv", "--labels", "yp.txt", "--pseudolabels", "f.csv", "--model", "a.bin"]),
    );
    ok(&dir, &with_fast(&["train", "--features", "x.csv", "--labels", "yp.txt", "--model", "b.bin"]));
    assert_eq!(fs::read(dir.join("a.bin")).unwrap(), fs::read(dir.join("b.bin")).unwrap());
}

#[test]
fn split_protocol_reports_metrics() {
    let (_tmp, dir) = dataset();
    let stdout = ok(
        &dir,
        &with_fast(&["evaluate", "--features", "x.csv", "--truth", "y.txt", "--split", "0.7", "--out", "e.txt"]),
    );
    assert_eq!(metric(&stdout, "n_train") + metric(&stdout, "n_test"), 45.0);
    assert!(metric(&stdout, "test_accuracy") >= 0.9);
    assert_eq!(fs::read_to_string(dir.join("e.txt")).unwrap(), stdout);
}

#[test]
fn lambda_sweep_emits_one_row_per_grid_value() {
    let (_tmp, dir) = dataset();
    ok(
        &dir,
        &with_fast(&[
            "sweep", "--kind", "lambda", "--grid", "0.01,0.1,1", "--features", "x.csv", "--truth", "y.txt", "--out", "s.csv",
        ]),
    );
    let csv = fs::read_to_string(dir.join("s.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.ends_with(",ok")));
}

#[test]
fn flags_override_config_which_overrides_defaults() {
    let (_tmp, dir) = dataset();
    fs::write(dir.join("run.cfg"), "# test\np=2.5\nlambda=0.3\n").unwrap();
    ok(
        &dir,
        &with_fast(&[
            "pseudolabel", "--features", "x.csv", "--labels", "yp.txt", "--out", "f.csv", "--config", "run.cfg", "--p", "1.7",
        ]),
    );
    let meta = fs::read_to_string(dir.join("f.csv.meta")).unwrap();
    assert!(meta.contains("config.p=1.7e0\n"));
    assert!(meta.contains("config.lambda=3e-1\n"));
    assert!(meta.contains("config.k_neighbors=5\n"));
}

#[test]
fn input_errors_exit_with_code_2_and_a_parseable_line() {
    let (_tmp, dir) = dataset();
    let out = ssdl(&dir, &["train", "--features", "missing.csv", "--labels", "yp.txt", "--model", "m.bin"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    let line = err.lines().next().unwrap();
    assert!(line.starts_with("error kind=input code=2 message="));
    assert!(line.contains("missing.csv"));

    fs::write(dir.join("bad.cfg"), "not_a_key=1\n").unwrap();
    let out = ssdl(&dir, &["pseudolabel", "--features", "x.csv", "--labels", "yp.txt", "--out", "f.csv", "--config", "bad.cfg"]);
    assert_eq!(out.status.code(), Some(2));

    let out = ssdl(&dir, &["sweep", "--kind", "beta", "--grid", "1", "--features", "x.csv", "--truth", "y.txt", "--out", "s.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_code_3() {
    let (_tmp, dir) = dataset();
    // A vanishing bandwidth underflows every off-centre incidence weight.
    let out = ssdl(
        &dir,
        &["pseudolabel", "--features", "x.csv", "--labels", "yp.txt", "--out", "f.csv", "--set", "bandwidth=1e-200"],
    );
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error kind=numerical code=3 message="));
}
