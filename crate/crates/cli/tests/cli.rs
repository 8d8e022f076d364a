use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const PLATEAU: &str = r#"
schema_version = 1

[problem]
kind = "plateau_1d"
n = 100
horizon = 0.1

[lagrangian]
kind = "tv"

[solve]
method = "newton"
tau = 0.01
mu = 0.01

[certify]
battery = 8

[output]
csv = true
"#;

fn lgflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lgflow")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = lgflow(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))).unwrap()
}

/// Writes the plateau config into `dir` and solves it into `dir/run`.
fn solved(dir: &Path) -> PathBuf {
    let cfg = dir.join("plateau.toml");
    fs::write(&cfg, PLATEAU).unwrap();
    let run = dir.join("run");
    ok(&["solve", s(&cfg), "--out", s(&run)]);
    run
}

#[test]
fn solve_writes_frames_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let run = solved(tmp.path());
    let frames = |ext: &str| {
        fs::read_dir(run.join("frames")).unwrap().filter(|e| e.as_ref().unwrap().path().extension().unwrap() == ext).count()
    };
    assert_eq!(frames("lgf"), 11);
    assert_eq!(frames("lgd"), 10);
    let meta = json(run.join("trajectory.json"));
    assert_eq!(meta["steps"], 10);
    assert_eq!(meta["failed_steps"].as_array().unwrap().len(), 0);
    let m = json(run.join("manifest-solve.json"));
    assert_eq!(m["command"], "solve");
    assert_eq!(m["outputs_sha256"].as_str().unwrap().len(), 64);
    assert!(m["outputs"].as_array().unwrap().iter().any(|o| o["path"] == "u_final.csv"));
    assert_eq!(fs::read_to_string(run.join("config.toml")).unwrap(), PLATEAU);
}

#[test]
fn repeated_runs_are_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ra, rb) = (solved(a.path()), solved(b.path()));
    for r in [&ra, &rb] {
        ok(&["certify", s(r)]);
    }
    for name in ["manifest-solve.json", "manifest-certify.json"] {
        assert_eq!(json(ra.join(name))["outputs_sha256"], json(rb.join(name))["outputs_sha256"], "{name}");
    }
    assert_eq!(fs::read(ra.join("certificate.json")).unwrap(), fs::read(rb.join("certificate.json")).unwrap());
}

#[test]
fn malformed_config_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        ("syntax.toml", "schema_version = 1\n[problem\n"),
        ("kind.toml", "schema_version = 1\n[problem]\nkind = \"nope\"\nn = 10\nhorizon = 0.1\n"),
        ("field.toml", &PLATEAU.replace("horizon = 0.1", "horizon = 0.1\nbogus = 3")),
        ("tau.toml", &PLATEAU.replace("tau = 0.01", "tau = -0.01")),
    ];
    for (name, text) in cases {
        let p = tmp.path().join(name);
        fs::write(&p, text).unwrap();
        let o = lgflow(&["solve", s(&p), "--out", s(&tmp.path().join("x"))]);
        assert_eq!(o.status.code(), Some(1), "{name}");
        assert!(!o.stderr.is_empty(), "{name}");
    }
    let o = lgflow(&["solve", s(&tmp.path().join("missing.toml"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn certify_passes_then_fails_when_corrupted() {
    let tmp = tempfile::tempdir().unwrap();
    let run = solved(tmp.path());
    ok(&["certify", s(&run)]);
    let cert = json(run.join("certificate.json"));
    assert_eq!(cert["pass"], true);
    assert!(cert["conditions"].as_array().unwrap().len() >= 3);

    // a frame from later in the run put in the middle breaks the subgradient pairing
    let f = run.join("frames");
    fs::copy(f.join("u_00009.lgf"), f.join("u_00004.lgf")).unwrap();
    let o = lgflow(&["certify", s(&run)]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(run.join("certificate.json"))["pass"], false);
}

#[test]
fn certify_without_test_functions() {
    let tmp = tempfile::tempdir().unwrap();
    let run = solved(tmp.path());
    let out = tmp.path().join("cert0");
    ok(&["certify", s(&run), "--battery", "0", "--out", s(&out)]);
    assert_eq!(json(out.join("certificate.json"))["pass"], true);
}

#[test]
fn missing_run_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = lgflow(&["certify", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_mu_writes_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("plateau.toml");
    fs::write(&cfg, PLATEAU).unwrap();
    let out = tmp.path().join("sweep");
    ok(&["sweep-mu", s(&cfg), "--mus", "0.1,0.05,0.025", "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let rep = json(out.join("sweep.json"));
    let d: Vec<f64> = rep["distances"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(d.len(), 2);
    assert!(d[1] < d[0], "{d:?}");
    let o = lgflow(&["sweep-mu", s(&cfg), "--mus", "0.05,0.1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn mollify_degiorgi_and_export() {
    let tmp = tempfile::tempdir().unwrap();
    let run = solved(tmp.path());

    ok(&["mollify", s(&run), "--deltas", "0.05,0.025"]);
    let rows = json(run.join("mollify.json"));
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert!(r["contraction_slack"].as_f64().unwrap() >= -1e-8);
    }

    ok(&["degiorgi", s(&run), "--center", "0.5", "--rho", "0.1", "--theta", "0.5", "--r", "3", "--xi", "0.1"]);
    let sb = json(run.join("degiorgi.json"));
    assert!(sb["bound"].as_f64().unwrap() >= sb["observed_max"].as_f64().unwrap());
    assert!(run.join("degiorgi_levels.csv").exists());
    let o = lgflow(&["degiorgi", s(&run), "--center", "0.5", "--rho", "0.1", "--theta", "0.5", "--r", "1", "--xi", "0.1"]);
    assert_eq!(o.status.code(), Some(1));

    let csv = tmp.path().join("csv");
    ok(&["export-csv", s(&run), "--every", "4", "--out", s(&csv)]);
    for k in [0, 4, 8, 10] {
        assert!(csv.join(format!("u_{k:05}.csv")).exists(), "{k}");
    }
    assert!(!csv.join("u_00005.csv").exists());
    assert_eq!(lgflow(&["export-csv", s(&run), "--every", "0"]).status.code(), Some(1));
}

#[test]
fn example_radial_growth() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ex");
    ok(&["example-radial", "--grid", "129", "--out", s(&out)]);
    let growth = fs::read_to_string(out.join("growth.csv")).unwrap();
    let rows: Vec<&str> = growth.lines().skip(1).collect();
    assert!(rows.len() >= 6);
    // annulus rows after the first double; the capped centre row comes last
    for line in &rows[1..rows.len() - 1] {
        let cols: Vec<&str> = line.split(',').collect();
        let ratio: f64 = cols[3].parse().unwrap();
        assert!((1.8..=2.05).contains(&ratio), "{line}");
    }
    assert_eq!(json(out.join("example.json"))["cap"], 128.0);
    let o = lgflow(&["example-radial", "--grid", "128", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn thread_count_is_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let o = lgflow(&["--threads", "0", "example-radial", "--out", s(&tmp.path().join("e"))]);
    assert_eq!(o.status.code(), Some(1));
    ok(&["--threads", "1", "example-radial", "--grid", "33", "--out", s(&tmp.path().join("e"))]);
}
