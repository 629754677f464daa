use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_irgnm-iv");

fn run(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("IRGNM_IV_THREADS", t),
        None => cmd.env_remove("IRGNM_IV_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn ok_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn err_json(out: &Output, code: i32) -> Value {
    assert_eq!(out.status.code(), Some(code), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stderr).expect("stderr is JSON")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Small grids keep the sample-based runs fast.
const SMALL: [&str; 6] = ["--grids.n_y", "64", "--grids.n_z", "64", "--grids.n_u", "64"];

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let s = ok_json(&run(&["simulate", "--n", "1000", "--seed", "7", "--out", p(&a)], None));
    assert_eq!(s["n"], 1000);
    ok_json(&run(&["simulate", "--n", "1000", "--seed", "7", "--out", p(&b)], Some("1")));
    assert_eq!(read(&a), read(&b));
    let text = String::from_utf8(read(&a)).unwrap();
    assert_eq!(text.lines().next(), Some("y,z,w"));
    assert_eq!(text.lines().count(), 1001);
}

#[test]
fn malformed_csv_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "y,z,w\n0.1,0.5,0\n0.2,abc,1\n").unwrap();
    let e = err_json(&run(&["estimate", "--sample", p(&bad), "--out", p(dir.path())], None), 2);
    assert_eq!(e["kind"], "parse");
    let e = err_json(&run(&["kde", "--sample", p(&dir.path().join("missing.csv"))], None), 2);
    assert_eq!(e["kind"], "io");
}

#[test]
fn input_errors_exit_with_two() {
    let e = err_json(&run(&["simulate", "--nosuch.key", "1"], None), 2);
    assert_eq!(e["kind"], "config");
    let e = err_json(&run(&["simulate", "--irgnm.ratio", "2"], None), 2);
    assert_eq!(e["kind"], "config");
    let e = err_json(&run(&["simulate", "--config", "/nonexistent/cfg.json"], None), 2);
    assert_eq!(e["kind"], "io");
    let e = err_json(&run(&["simulate", "--n", "10"], Some("zero")), 2);
    assert_eq!(e["kind"], "config");
    let e = err_json(&run(&["frobnicate"], None), 2);
    assert_eq!(e["kind"], "usage");
    let e = err_json(&run(&["kde"], None), 2);
    assert_eq!(e["kind"], "usage");
    assert!(run(&["--help"], None).status.success());
}

#[test]
fn subproblem_failure_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "estimate",
        "--out",
        p(dir.path()),
        "--irgnm.subproblem.max_iter",
        "1",
        "--irgnm.subproblem.tol",
        "1e-300",
    ];
    let e = err_json(&run(&args, None), 1);
    assert_eq!(e["kind"], "numerical");
    assert!(dir.path().join("trace.csv").exists());
}

#[test]
fn config_file_and_overrides_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"simulate": {"n": 40, "seed": 1}}"#).unwrap();
    let out = dir.path().join("s.csv");
    let s = ok_json(&run(&["simulate", "--config", p(&cfg), "--seed", "2", "--out", p(&out)], None));
    assert_eq!(s["n"], 40);
    assert_eq!(s["seed"], 2);
}

#[test]
fn exact_estimate_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let s = ok_json(&run(&["estimate", "--sample", "exact", "--out", p(dir.path())], None));
    assert_eq!(s["mode"], "exact");
    for f in ["config.json", "trace.csv", "stop.json", "errors.csv", "phi_hat.csv", "summary.json", "overlay.svg"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let trace = String::from_utf8(read(&dir.path().join("trace.csv"))).unwrap();
    assert_eq!(trace.lines().next(), Some("k,alpha,residual_norm,subproblem_iters,kkt_residual"));
    let errors = String::from_utf8(read(&dir.path().join("errors.csv"))).unwrap();
    let first = errors.lines().nth(1).unwrap();
    assert!(first.ends_with(",1.0000000000000000e0"), "{first}");
    let stop: Value = serde_json::from_slice(&read(&dir.path().join("stop.json"))).unwrap();
    assert_eq!(stop["stop_reason"], "lepskii");
    let phi = String::from_utf8(read(&dir.path().join("phi_hat.csv"))).unwrap();
    assert_eq!(phi.lines().next(), Some("x,value"));
    assert_eq!(phi.lines().count(), 257);
}

#[test]
fn sample_pipeline_is_bit_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let sample = dir.path().join("s.csv");
    ok_json(&run(&["simulate", "--n", "3000", "--seed", "11", "--out", p(&sample)], None));
    let mut outputs = Vec::new();
    for (name, threads) in [("a", "1"), ("b", "3")] {
        let kde = dir.path().join(format!("kde_{name}"));
        let est = dir.path().join(format!("est_{name}"));
        let mut args = vec!["kde", "--sample", p(&sample), "--out", p(&kde)];
        args.extend(SMALL);
        ok_json(&run(&args, Some(threads)));
        let mut args = vec!["estimate", "--sample", p(&sample), "--out", p(&est)];
        args.extend(SMALL);
        ok_json(&run(&args, Some(threads)));
        outputs.push((kde, est));
    }
    let (a, b) = (&outputs[0], &outputs[1]);
    for f in ["f_w0.csv", "f_w1.csv", "header.json"] {
        assert_eq!(read(&a.0.join(f)), read(&b.0.join(f)), "{f}");
    }
    for f in ["trace.csv", "errors.csv", "phi_hat.csv", "summary.json"] {
        assert_eq!(read(&a.1.join(f)), read(&b.1.join(f)), "{f}");
    }
}

#[test]
fn montecarlo_with_one_replication_has_flat_quantiles() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["montecarlo", "--out", p(dir.path()), "--montecarlo.replications", "1", "--montecarlo.n_list", "[2000]"];
    args.extend(SMALL);
    let s = ok_json(&run(&args, None));
    let row = &s["rows"][0];
    for q in ["mean", "p25", "p50", "p75", "p90"] {
        assert_eq!(row[q], row["p50"], "{q}");
    }
    let table = String::from_utf8(read(&dir.path().join("table.csv"))).unwrap();
    assert_eq!(table.lines().next(), Some("n,mean,p25,p50,p75,p90"));
    for f in ["replications.csv", "report.json", "hist_n2000.svg", "median_n2000.svg", "median_n2000.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn montecarlo_tables_do_not_depend_on_threads() {
    let dir = tempfile::tempdir().unwrap();
    let mut tables = Vec::new();
    for threads in ["1", "2"] {
        let out = dir.path().join(threads);
        let mut args = vec!["montecarlo", "--out", p(&out), "--montecarlo.replications", "3", "--montecarlo.n_list", "[500, 1000]"];
        args.extend(SMALL);
        ok_json(&run(&args, Some(threads)));
        tables.push((read(&out.join("table.csv")), read(&out.join("replications.csv"))));
    }
    assert_eq!(tables[0], tables[1]);
}

#[test]
fn svd_emits_full_spectrum_with_exponential_decay() {
    let dir = tempfile::tempdir().unwrap();
    let s = ok_json(&run(&["svd", "--out", p(dir.path())], None));
    assert_eq!(s["count"], 256);
    assert!(s["r_squared"].as_f64().unwrap() >= 0.95);
    let csv = String::from_utf8(read(&dir.path().join("spectrum.csv"))).unwrap();
    assert_eq!(csv.lines().next(), Some("j,sigma"));
    assert_eq!(csv.lines().count(), 257);
    let svg = String::from_utf8(read(&dir.path().join("spectrum.svg"))).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn rates_report_slope_near_one_half() {
    let dir = tempfile::tempdir().unwrap();
    let s = ok_json(&run(&["rates", "--out", p(dir.path())], None));
    let slope = s["fitted"].as_f64().unwrap();
    assert!((0.4..=0.6).contains(&slope), "{slope}");
    let fit = String::from_utf8(read(&dir.path().join("rates_fit.csv"))).unwrap();
    assert_eq!(fit.lines().next(), Some("source,parameter,decay,fitted,target,r_squared"));
}
