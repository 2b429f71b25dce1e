//! Drives the `lmclab` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

fn lmclab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lmclab")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn value(o: &Output, metric: &str) -> String {
    stdout(o)
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{metric},")).map(str::to_string))
        .unwrap_or_else(|| panic!("no {metric} in {}", stdout(o)))
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn kappa_and_exit_codes() {
    let ok = lmclab(&["kappa", "--t", "1", "--dim", "4"]);
    assert!(ok.status.success());
    assert_eq!(value(&ok, "kappa").parse::<f64>().unwrap(), 0.125);
    let neg = lmclab(&["kappa", "--t", "-1", "--dim", "4"]);
    assert_eq!(value(&neg, "kappa"), "0");

    assert_eq!(lmclab(&["kappa", "--t", "1.5", "--dim", "4"]).status.code(), Some(2));
    assert_eq!(lmclab(&["kappa", "--dim", "x"]).status.code(), Some(1));
    assert_eq!(lmclab(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(lmclab(&["--help"]).status.code(), Some(0));
    assert_eq!(lmclab(&["kappa", "--t", "0", "--dim", "1", "--format", "csv"]).status.code(), Some(0));
}

#[test]
fn sample_classify_permute_barrier_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, p) = (path(dir.path(), "a.csv"), path(dir.path(), "b.csv"), path(dir.path(), "p.csv"));
    for (seed, out) in [("1", &a), ("2", &b)] {
        let o = lmclab(&["sample", "--width", "8", "--teachers", "3", "--dim", "5", "--seed", seed, "--out", out]);
        assert!(o.status.success());
    }
    let c = lmclab(&["classify", "--weights", &a, "--teachers", "3", "--tol", "1e-10"]);
    assert_eq!(value(&c, "global_min"), "true");
    assert_eq!(value(&c, "labels").split(' ').count(), 8);

    let loss = lmclab(&["loss", "--weights", &a, "--teachers", "3"]);
    assert!(value(&loss, "loss").parse::<f64>().unwrap() < 1e-12);

    let report = path(dir.path(), "report.csv");
    let perm = lmclab(&["permute", "--w1", &a, "--w2", &b, "--teachers", "3", "--out", &p, "--report", &report]);
    assert!(perm.status.success());
    let rep = std::fs::read_to_string(&report).unwrap();
    assert!(rep.starts_with("type,alpha1,alpha2,matched,gamma1,gamma2\n"));
    assert_eq!(rep.lines().count(), 4);

    let direct = lmclab(&["barrier", "--w1", &a, "--w2", &b, "--teachers", "3"]);
    let profile = path(dir.path(), "profile.csv");
    let permuted =
        lmclab(&["barrier", "--w1", &a, "--w2", &b, "--teachers", "3", "--permute", "--grid", "21", "--out", &profile]);
    let aligned = lmclab(&["barrier", "--w1", &a, "--w2", &p, "--teachers", "3", "--grid", "21"]);
    let d: f64 = value(&direct, "barrier").parse().unwrap();
    let q: f64 = value(&permuted, "barrier").parse().unwrap();
    assert!(q <= d + 1e-12);
    assert_eq!(value(&permuted, "barrier"), value(&aligned, "barrier"));
    assert_eq!(std::fs::read_to_string(&profile).unwrap().lines().count(), 22);

    let pq = lmclab(&["pqi", "--weights", &a]);
    assert!(value(&pq, "pq_flat").parse::<f64>().unwrap() > 0.0);
}

#[test]
fn train_writes_weights_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let (w, trace) = (path(dir.path(), "w.csv"), path(dir.path(), "trace.csv"));
    let o = lmclab(&[
        "train",
        "--width",
        "4",
        "--teachers",
        "2",
        "--dim",
        "3",
        "--lr0",
        "3",
        "--seed",
        "5",
        "--out",
        &w,
        "--trace",
        &trace,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(value(&o, "converged"), "true");
    assert!(std::fs::read_to_string(&trace).unwrap().starts_with("iteration,loss\n"));
    let loss = lmclab(&["loss", "--weights", &w, "--teachers", "2"]);
    assert_eq!(value(&loss, "loss"), value(&o, "final_loss"));

    let diverged = lmclab(&[
        "train",
        "--width",
        "30",
        "--teachers",
        "6",
        "--dim",
        "8",
        "--lr0",
        "2",
        "--schedule",
        "constant",
        "--out",
        &w,
    ]);
    assert_eq!(diverged.status.code(), Some(2));
}

#[test]
fn overlap_modes() {
    let pair = lmclab(&["overlap", "--alpha1", "2,0,1", "--alpha2", "1,1,1"]);
    assert_eq!(value(&pair, "overlap_c"), "5");
    let exact = lmclab(&["overlap", "--width", "12", "--teachers", "6"]);
    let mc = lmclab(&["overlap", "--width", "12", "--teachers", "6", "--mc", "20000", "--seed", "3"]);
    let (e, m, s): (f64, f64, f64) = (
        value(&exact, "mean_p").parse().unwrap(),
        value(&mc, "mean_p").parse().unwrap(),
        value(&mc, "stderr").parse().unwrap(),
    );
    assert!((e - m).abs() < 4.0 * s);
    assert_eq!(lmclab(&["overlap", "--width", "3", "--teachers", "6"]).status.code(), Some(1));
}

#[test]
fn experiment_run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = path(dir.path(), "c.toml");
    std::fs::write(
        &cfg,
        "experiment = \"barrier_curve\"\nsolution_source = \"uniform\"\nreplicates = 4\n\n[grid]\nm_range = [3, 9]\nteachers = [3]\ndim = [4]\n",
    )
    .unwrap();
    for sub in ["a", "b"] {
        let o = lmclab(&["experiment", "run", &cfg, "--out", &path(dir.path(), sub)]);
        assert!(o.status.success());
        assert_eq!(value(&o, "result_rows"), (7 * 4 * 7).to_string());
    }
    for f in ["results.csv", "summary.csv", "errors.csv"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(f)).unwrap(),
            std::fs::read(dir.path().join("b").join(f)).unwrap()
        );
    }
    assert!(dir.path().join("a/manifest.toml").exists() && dir.path().join("a/plot.py").exists());

    std::fs::write(&cfg, "experiment = \"barrier_curve\"\nsolution_source = \"uniform\"\nreplicate = 4\n").unwrap();
    assert_eq!(lmclab(&["experiment", "run", &cfg]).status.code(), Some(1));
}
