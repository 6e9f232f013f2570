use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sparse-sensing"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn single_error_line(out: &Output) -> String {
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = err.lines().filter(|l| l.starts_with("error: ")).collect();
    assert_eq!(lines.len(), 1, "{err}");
    lines[0].to_string()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("experiment.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn simulate_and_place() {
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("lti.snap");
    let out = dir.path().join("o");
    ok(&["simulate-lti", "--seed", "3", "--out", snap.to_str().unwrap()]);
    ok(&["place", "--snapshots", snap.to_str().unwrap(), "--rank", "7", "--out", out.to_str().unwrap()]);
    let placement = fs::read_to_string(out.join("placement.csv")).unwrap();
    assert_eq!(placement.lines().count(), 8);
    assert!(placement.starts_with("order,index,x\n"));
    assert!(out.join("objective.txt").exists());
}

#[test]
fn region_and_predetermined_flags() {
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("lti.csv");
    ok(&["simulate-lti", "--seed", "0", "--out", snap.to_str().unwrap()]);
    let s = snap.to_str().unwrap();
    let out = dir.path().join("o");
    let o = out.to_str().unwrap();
    let stdout = ok(&["place", "--snapshots", s, "--rank", "7", "--region", "1,2,3,4,5", "--exact", "2", "--out", o]);
    let sensors: Vec<usize> = stdout.lines().next().unwrap()["sensors ".len()..]
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(sensors.iter().filter(|i| **i <= 5).count(), 2);

    let stdout = ok(&["place", "--snapshots", s, "--rank", "7", "--predetermined", "1,25", "--out", o]);
    let line = stdout.lines().next().unwrap();
    let mut tail: Vec<&str> = line["sensors ".len()..].split(',').skip(5).collect();
    tail.sort();
    assert_eq!(tail, vec!["1", "25"]);

    // 3 is among the first five unconstrained pivots for this system
    let clash = run(&["place", "--snapshots", s, "--rank", "7", "--predetermined", "3,25", "--out", o]);
    assert!(single_error_line(&clash).starts_with("error: infeasible: "));
}

#[test]
fn errors_are_single_prefixed_lines() {
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("lti.snap");
    ok(&["simulate-lti", "--out", snap.to_str().unwrap()]);
    let s = snap.to_str().unwrap();

    let line = single_error_line(&run(&["place", "--snapshots", s, "--rank", "40"]));
    assert!(line.starts_with("error: rank-out-of-range: "), "{line}");

    let line = single_error_line(&run(&["place", "--snapshots", s, "--rank", "7", "--region", "1,2", "--exact", "3"]));
    assert!(line.starts_with("error: invalid-constraint: "), "{line}");

    let line = single_error_line(&run(&["place", "--frobnicate"]));
    assert!(line.starts_with("error: usage: "), "{line}");

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "1,2\n3,oops\n").unwrap();
    let line = single_error_line(&run(&["pod", "--snapshots", bad.to_str().unwrap(), "--rank", "1"]));
    assert!(line.starts_with("error: format: ") && line.contains("line 2, column 2"), "{line}");

    let huge = run(&["enumerate", "--snapshots", s, "--rank", "12", "--cap", "1000"]);
    assert!(single_error_line(&huge).starts_with("error: cap-exceeded: "));
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let cfg = write_config(
        dir.path(),
        &format!(
            "rank = 5\nseed = 2\noutput = \"{}\"\n[source]\nkind = \"lti\"\nsteps = 120\n",
            out.display()
        ),
    );
    ok(&["place", "--config", &cfg]);
    assert_eq!(fs::read_to_string(out.join("placement.csv")).unwrap().lines().count(), 6);
    ok(&["place", "--config", &cfg, "--rank", "4"]);
    assert_eq!(fs::read_to_string(out.join("placement.csv")).unwrap().lines().count(), 5);
}

#[test]
fn pipeline_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let body = |out: &Path| {
        format!(
            "rank = 7\nseed = 11\nnoise_std = 0.05\noutput = \"{}\"\n\n[source]\nkind = \"lti\"\ntest_steps = 50\n\n[oracle]\n",
            out.display()
        )
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let cfg_a = dir.path().join("a.toml");
    fs::write(&cfg_a, body(&a)).unwrap();
    ok(&["pipeline", "--config", cfg_a.to_str().unwrap()]);
    ok(&["pipeline", "--config", cfg_a.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    for name in ["placement.csv", "errors.csv", "uncertainty.csv", "histogram.csv", "percentile.txt", "objective.txt"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let percentile: f64 = fs::read_to_string(a.join("percentile.txt")).unwrap().trim().parse().unwrap();
    assert!(percentile >= 99.0, "{percentile}");
}

#[test]
fn pipeline_requires_config() {
    let line = single_error_line(&run(&["pipeline", "--rank", "3"]));
    assert!(line.starts_with("error: config: "), "{line}");
}

#[test]
fn heat_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("heat.csv");
    let s = snap.to_str().unwrap();
    ok(&["simulate-heat", "--nx", "16", "--ny", "12", "--steps", "200", "--out", s]);
    let out = dir.path().join("o");
    let o = out.to_str().unwrap();
    let stdout = ok(&["pod", "--snapshots", s, "--rank", "4", "--out", o]);
    assert!(stdout.starts_with("rank 4"));
    let energy = fs::read_to_string(out.join("energy.csv")).unwrap();
    assert!(energy.starts_with("mode,singular_value,energy,cumulative\n"));
    ok(&[
        "place", "--snapshots", s, "--grid", "16,12", "--rank", "6", "--region-columns", "3", "--max", "2", "--out", o,
    ]);
    let placement = fs::read_to_string(out.join("placement.csv")).unwrap();
    let in_region = placement
        .lines()
        .skip(1)
        .filter(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap() < 3.0)
        .count();
    assert!(in_region <= 2);
    ok(&["reconstruct", "--snapshots", s, "--rank", "6", "--placement", out.join("placement.csv").to_str().unwrap(), "--noise-std", "0.01", "--out", o]);
    assert_eq!(fs::read_to_string(out.join("errors.csv")).unwrap().lines().count(), 201);
    ok(&["uncertainty", "--snapshots", s, "--rank", "6", "--noise-std", "0.01", "--out", o]);
    let unc = fs::read_to_string(out.join("uncertainty.csv")).unwrap();
    assert_eq!(unc.lines().filter(|l| l.starts_with("three_sigma,")).count(), 6);
}
