use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn torbit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_torbit")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn markov_defaults_give_about_two_minutes() {
    let o = torbit(&["markov", "--trials", "2000"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let t = v["analytic_s"].as_f64().unwrap();
    assert!((t - 124.71).abs() < 0.01, "{t}");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(torbit(&["simulate", "/nonexistent/scenario.toml"]).status.code(), Some(1));
    assert_eq!(torbit(&["markov", "--frac-unreachable", "1.5"]).status.code(), Some(1));
    assert_eq!(torbit(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(torbit(&["cost", "--exit-weight", "-5"]).status.code(), Some(1));
    assert_eq!(torbit(&["--help"]).status.code(), Some(0));
}

#[test]
fn invalid_scenario_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    for body in ["[attacker]\nmatch_threshold = 2.0\n", "[clients]\nwarp = 9\n", "duration_s = \"long\"\n"] {
        std::fs::write(&p, body).unwrap();
        let o = torbit(&["simulate", p.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(1), "{body}");
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn simulate_writes_metrics_and_siblings() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.jsonl");
    let books = dir.path().join("books");
    let o = torbit(&[
        "simulate",
        fixture("scenario_capture.toml").to_str().unwrap(),
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
        "--books",
        books.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let jsonl = std::fs::read_to_string(&out).unwrap();
    assert!(jsonl.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
    assert!(std::fs::read_to_string(dir.path().join("run.csv")).unwrap().starts_with("client,"));
    assert!(dir.path().join("run.cookies.jsonl").exists());
    assert!(books.join("client_0.book").exists());

    let again = dir.path().join("again.jsonl");
    let cfg = fixture("scenario_capture.toml");
    assert!(torbit(&["simulate", cfg.to_str().unwrap(), "--seed", "3", "--out", again.to_str().unwrap()]).status.success());
    assert_eq!(jsonl, std::fs::read_to_string(&again).unwrap());
}

#[test]
fn sweep_csv_header() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.toml");
    std::fs::write(&grid, "exit_weights = [200000, 800000]\nsybil_counts = [0, 10]\ntrials = 100\nsimulate = false\n").unwrap();
    let o = torbit(&["sweep", grid.to_str().unwrap()]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.starts_with("exit_weight,sybil_count,analytic_s,mc_mean_s,mc_ci95_s"));
    assert_eq!(s.lines().count(), 5);
}

#[test]
fn hsdir_rejects_malformed_onion() {
    let ring = fixture("hsdir_ring_200.txt");
    let o = torbit(&["hsdir", "--ring", ring.to_str().unwrap(), "--onion", "zz", "--day", "1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn cookie_prints_one_row_per_session() {
    let o = torbit(&["cookie", "--sessions", "4", "--runs", "2"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert_eq!(s.lines().next(), Some("session,hours,survivors,observed"));
    assert_eq!(s.lines().count(), 5);
}
