use std::path::Path;
use std::process::{Command, Output};

const SYMMETRIC: &str = "[market]\nalpha = 1.5\nbeta = 0.3\ngamma_u = 5.0\noutcomes = [1.0, 3.0]\n";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_infomarket"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    std::fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

#[test]
fn solve_prints_the_day_ahead_price() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", SYMMETRIC);
    let out = run(dir.path(), &["solve", "--config", &cfg, "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let da = v["day_ahead_price"].as_f64().unwrap();
    assert!((da - 3.9167).abs() < 1e-3, "{da}");
    assert_eq!(v["converged"], true);
}

#[test]
fn solve_writes_trace_and_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s.toml",
        &format!("{SYMMETRIC}\n[solver]\ntrace = true\n"),
    );
    let out = run(dir.path(), &["solve", "--config", &cfg, "--out", "res"]);
    assert_eq!(out.status.code(), Some(0));
    let trace = std::fs::read_to_string(dir.path().join("res/trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,max_sq_imbalance,day_ahead_price\n"));
    let spectrum = std::fs::read_to_string(dir.path().join("res/spectrum.csv")).unwrap();
    let eig: Vec<f64> = spectrum
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(eig.len(), 2);
    assert!(
        (eig[0] + 16.0).abs() < 1e-12 && (eig[1] + 8.0).abs() < 1e-12,
        "{eig:?}"
    );
}

#[test]
fn non_convergence_has_its_own_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s.toml",
        "[market]\nalpha = 1.5\nbeta = 0.3\ngamma_u = 5.0\nproducer_distribution = \"sigma3_down\"\n",
    );
    let out = run(
        dir.path(),
        &["solve", "--config", &cfg, "--nu-max", "20000"],
    );
    assert_eq!(out.status.code(), Some(2));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("residual"));
    assert!(stdout.contains("converged       false"));
}

#[test]
fn missing_alpha_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.toml",
        "[market]\nbeta = 0.3\ngamma_u = 5.0\n",
    );
    let out = run(dir.path(), &["solve", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("alpha"), "{stderr}");
    assert!(stderr.contains("line"), "{stderr}");
}

#[test]
fn invalid_instance_lists_violations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.toml",
        "[market]\nalpha = 0.0\nbeta = 0.3\ngamma_u = 5.0\noutcomes = [1.0, 3.0]\nconsumer_beliefs = [0.7, 0.7]\n",
    );
    let out = run(dir.path(), &["solve", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("alpha must be positive"), "{stderr}");
    assert!(stderr.contains("consumer_beliefs"), "{stderr}");
}

#[test]
fn solve_requires_a_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["solve"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweeps_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["a", "b"] {
        let out = run(
            dir.path(),
            &["sweep", "mean-family", "--out", sub, "--nu-max", "50000"],
        );
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let out = run(
            dir.path(),
            &["sweep", "grid2d", "--out", sub, "--grid", "9"],
        );
        assert_eq!(out.status.code(), Some(0));
    }
    for file in ["mean_family.csv", "grid2d.csv"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
    let text = std::fs::read_to_string(dir.path().join("a/mean_family.csv")).unwrap();
    assert!(text.starts_with(
        "label,delta,gamma_w,mean,variance,day_ahead_price,p,d,mismatch,iterations,eig_ratio,converged,verdict,error\n"
    ));
    assert_eq!(text.lines().count(), 8);
    let grid = std::fs::read_to_string(dir.path().join("a/grid2d.csv")).unwrap();
    assert!(grid.starts_with("pi_p_l,pi_c_l,lambda_l,lambda_h,lambda_da,interior\n"));
    assert_eq!(grid.lines().count(), 82);
}

#[test]
fn mean_family_peaks_at_the_reference() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["sweep", "mean-family", "--nu-max", "10", "--json"],
    );
    assert_eq!(out.status.code(), Some(0));
    let rows: Vec<serde_json::Value> = serde_json::from_slice(&out.stdout).unwrap();
    let price = |r: &serde_json::Value| r["day_ahead_price"].as_f64().unwrap();
    let mismatch = |r: &serde_json::Value| r["mismatch"].as_f64().unwrap();
    let reference = rows.iter().find(|r| r["label"] == "R").unwrap();
    for r in &rows {
        assert!(price(r) <= price(reference));
        assert!(mismatch(r) >= mismatch(reference));
    }
}

#[test]
fn welfare_against_the_reference_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["welfare", "--comparison", "R"]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(dir.path().join("welfare.csv")).unwrap();
    assert!(text.starts_with("outcome_rank,xi,sw_reference,sw_asymmetric,loss\n"));
    for line in text.lines().skip(1) {
        assert!(line.ends_with(",0.0"), "{line}");
    }
}

#[test]
fn field_writes_both_presets() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["field", "--grid", "11", "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let summary: Vec<serde_json::Value> = serde_json::from_slice(&out.stdout).unwrap();
    let ratio = |i: usize| summary[i]["speed_ratio"].as_f64().unwrap();
    assert!(ratio(0) < 3.0 && ratio(0) > 1.0 / 3.0);
    assert!(ratio(1) > 5.0);
    for f in [
        "field_symmetric.csv",
        "field_asymmetric_trajectory.csv",
        "field_summary.csv",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let field = std::fs::read_to_string(dir.path().join("field_symmetric.csv")).unwrap();
    assert!(field.starts_with("lambda_l,lambda_h,v_l,v_h\n"));
}

#[test]
fn stability_prints_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["stability", "--nu-max", "100"]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("sigma3_down"));
    let csv = std::fs::read_to_string(dir.path().join("stability.csv")).unwrap();
    assert!(csv.starts_with("family,label,iterations,converged,eig_ratio,verdict,error\n"));
    assert_eq!(csv.lines().count(), 15);
}
