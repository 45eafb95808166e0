use std::process::{Command, Output};

use bangbang::experiments::{ScenarioConfig, SCENARIOS};

fn bangbang(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bangbang")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn lists_every_builtin_scenario() {
    let o = bangbang(&["scenario", "list"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for name in SCENARIOS {
        assert!(text.contains(name), "{name} missing from\n{text}");
    }
}

#[test]
fn shown_config_parses_back() {
    let o = bangbang(&["scenario", "show", "lorenz"]);
    assert!(o.status.success());
    let cfg = ScenarioConfig::from_toml(&stdout(&o)).unwrap();
    assert_eq!(cfg.name, "lorenz");
    assert_eq!(cfg.train.n, 1000);
}

#[test]
fn train_then_simulate_from_the_saved_policy() {
    let dir = tempfile::tempdir().unwrap();
    let policy = dir.path().join("policy.json");
    let traj = dir.path().join("traj.csv");
    let o = bangbang(&["train", "--model", "duffing", "--n", "30", "--seed", "3", "--out", policy.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("trained 30 samples"));
    let o = bangbang(&[
        "simulate",
        "--model",
        "duffing",
        "--policy",
        policy.to_str().unwrap(),
        "--x0",
        "-1,0",
        "--duration",
        "2",
        "--out",
        traj.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&traj).unwrap();
    assert_eq!(csv.lines().next(), Some("t,x1,x2,u"));
    assert_eq!(csv.lines().count(), 1 + 2001);
}

#[test]
fn effectiveness_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("trials.csv");
    let o = bangbang(&["effectiveness", "--model", "duffing", "--trials", "20", "--sigma", "0.1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("over 20 trials"));
    assert_eq!(std::fs::read_to_string(out).unwrap().lines().count(), 21);
}

#[test]
fn scenario_run_from_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("custom.toml");
    let text = stdout(&bangbang(&["scenario", "show", "duffing"]))
        .replace("name = \"duffing\"", "name = \"custom\"")
        .replace("trials = 1000", "trials = 25");
    std::fs::write(&cfg_path, text).unwrap();
    let out = dir.path().join("out");
    let o = bangbang(&["scenario", "run", cfg_path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("over 25 trials"));
    assert!(out.join("report.json").exists());
}

#[test]
fn failures_exit_nonzero_with_a_stage_diagnostic() {
    let o = bangbang(&["scenario", "run", "no_such_scenario"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("neither a built-in scenario"));

    let dir = tempfile::tempdir().unwrap();
    let o = bangbang(&["scenario", "run", "duffing", "--tau=-1", "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("classifier.tau must be positive"));

    let cfg_path = dir.path().join("bad.toml");
    let text = stdout(&bangbang(&["scenario", "show", "thalamic_phase"]))
        .replace("name = \"thalamic_phase\"", "name = \"custom\"")
        .replace("x0 = [-65.0, 0.5, 0.1]", "x0 = [-65.0]");
    std::fs::write(&cfg_path, text).unwrap();
    let o = bangbang(&["scenario", "run", cfg_path.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("cycle failed"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn sweep_noise_defaults_to_the_noise_scenario() {
    let o = bangbang(&["sweep-noise", "--model", "duffing", "--sigmas", "0.2", "--taus", "0.4,1.2", "--trials", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("sigma=0.2 tau=")).count(), 2);
}
