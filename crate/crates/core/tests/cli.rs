use std::path::Path;
use std::process::{Command, Output};

const HEADER: &str = "iter,round,policy,seed,superarm,response_time,cum_time,employments,cum_employments,model_error";

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmab-sgd"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.cfg");
    std::fs::write(&path, "# tiny setup\nn = 8\nb = 3\nm = 40\nd = 4\neta = 0.001\n").unwrap();
    path.display().to_string()
}

#[test]
fn run_is_byte_for_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let mut traces = Vec::new();
    for sub in ["a", "b"] {
        let out = dir.path().join(sub);
        let o = cli(&[
            "run", "--config", &config, "--seed", "11", "--policy", "cmab", "--variant", "scaled",
            "--schedule", "list:10,30,60", "--out", out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        traces.push(std::fs::read(out.join("cmab-scaled_11.csv")).unwrap());
    }
    assert_eq!(traces[0], traces[1]);
    let text = String::from_utf8(traces.swap_remove(0)).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(HEADER));
    assert_eq!(lines.count(), 60);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out = dir.path().join("o");
    let o = cli(&[
        "run", "--config", &config, "--seed", "2", "--policy", "adaptive-ksync", "--schedule", "list:5,9,12",
        "--set", "train=false", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(out.join("adaptive-ksync_2.csv")).unwrap();
    let last = text.lines().last().unwrap();
    let fields: Vec<&str> = last.split(',').collect();
    assert_eq!(fields[0], "12");
    assert_eq!(fields[7], "8");
    assert_eq!(fields[8], "96");
    assert_eq!(fields[9], "");
}

#[test]
fn faults_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    for args in [
        vec!["run", "--config", config.as_str(), "--policy", "greedy"],
        vec!["run", "--config", config.as_str(), "--schedule", "list:5,9"],
        vec!["run", "--config", "/nonexistent.cfg"],
        vec!["run", "--config", config.as_str(), "--set", "b=9"],
    ] {
        let o = cli(&args);
        assert!(!o.status.success(), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("error"), "{args:?}");
    }
}

#[test]
fn compare_and_bounds_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out = dir.path().join("cmp");
    let o = cli(&[
        "compare", "--config", &config, "--seed", "0..3", "--policy", "cmab-plain,optimal,adaptive-ksync",
        "--schedule", "list:20,40,80", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["switching_points"], serde_json::json!([20, 40, 80]));
    assert_eq!(summary["policies"].as_array().unwrap().len(), 3);
    let fig3 = std::fs::read_to_string(out.join("fig3.csv")).unwrap();
    assert!(fig3.starts_with("policy,iter,round,mean_regret,theorem1_bound"));

    let o = cli(&[
        "bounds", "--means", "0.2,0.5,0.9", "--schedule", "list:10,20", "--set", "n=3", "--set", "b=2",
        "--epsilon", "1", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["bounds"].as_array().unwrap().len(), 2);
}
