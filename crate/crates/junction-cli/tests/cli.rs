//! End-to-end checks of the binary: exit codes, file outputs, determinism.

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn junction(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_junction")).args(args).output().expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("junction-cli-{name}"));
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn unknown_flags_are_usage_errors() {
    let out = junction(&["run", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_config_is_a_usage_error() {
    let dir = scratch("badcfg");
    let cfg = dir.join("bad.toml");
    fs::write(&cfg, "not_a_key = 1").unwrap();
    let out = junction(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not_a_key"));
}

#[test]
fn run_prints_metrics_and_writes_a_trace() {
    let dir = scratch("run");
    let cfg = dir.join("run.toml");
    fs::write(&cfg, "horizon_s = 60.0\nwarmup_s = 0.0\nflow_veh_h_lane = 600.0\nseed = 3\n")
        .unwrap();
    let trace = dir.join("trace.csv");
    let out = junction(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--trace",
        "--out",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("seed 3"));
    assert!(text.contains("throughput"));
    let body = fs::read_to_string(&trace).unwrap();
    let mut lines = body.lines();
    assert_eq!(lines.next(), Some("run_id,t,vehicle_id,class,lane,mode,p,v,u"));
    assert!(lines.next().unwrap().starts_with("3,"));
}

#[test]
fn trace_without_out_is_a_usage_error() {
    let out = junction(&["run", "--trace"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn two_vehicle_demo_holds_the_requested_gap() {
    let dir = scratch("demo");
    let trace = dir.join("demo.csv");
    let out = junction(&["replicate-fig5", "--out", trace.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("gap tracking on"));
    assert!(text.contains("minimum separation"));
    let body = fs::read_to_string(&trace).unwrap();
    assert!(body.contains(",human,"));
    assert!(body.contains(",cav,"));
}

#[test]
fn sweep_writes_deterministic_results_and_stddev_files() {
    let dir = scratch("sweep");
    let cfg = dir.join("sweep.toml");
    fs::write(
        &cfg,
        "horizon_s = 30.0\nwarmup_s = 0.0\nvariant = \"s3\"\npenetrations = [0.0]\nflows = [600.0]\nseeds = [1, 2]\n",
    )
    .unwrap();
    let out_a = dir.join("a.csv");
    let out_b = dir.join("b.csv");
    for path in [&out_a, &out_b] {
        let out = junction(&["sweep", "--config", cfg.to_str().unwrap(), "--out", path.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    let a = fs::read_to_string(&out_a).unwrap();
    let b = fs::read_to_string(&out_b).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 1 + 2 + 1, "header, two seed rows, one mean row");
    assert!(a.starts_with("variant,penetration,flow,seed,"));
    let std_body = fs::read_to_string(dir.join("a_stddev.csv")).unwrap();
    assert!(std_body.lines().any(|l| l.contains(",std,")));
}

#[test]
fn saturation_reports_degree_and_regime() {
    let out = junction(&["saturation", "--flow", "750"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("0.8333"));
    assert!(text.contains("near-saturated"));
}
