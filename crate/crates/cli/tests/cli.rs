use std::fs;
use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"
model = "gene_regulation"
agents = 5
horizon = 15
particles = 30
repetitions = 2

[em]
max_iterations = 2
"#;

fn pcdpem(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_pcdpem")).args(args).output().expect("binary runs");
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn every_subcommand_writes_a_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("study.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let c = cfg.to_str().unwrap();
    let dir = |name: &str| tmp.path().join(name);
    let s = |p: &Path| p.to_str().unwrap().to_string();

    pcdpem(&["topology", "--config", c, "--out", &s(&dir("topo"))]);
    assert!(fs::read_to_string(dir("topo").join("edges.csv")).unwrap().lines().count() > 5);

    pcdpem(&["simulate", "--config", c, "--states", "--seed", "7", "--out", &s(&dir("sim"))]);
    let m = manifest(&dir("sim"));
    assert_eq!(m["seed"], 7);
    assert_eq!(m["config"]["agents"], 5);
    assert!(fs::read_to_string(dir("sim").join("data.csv")).unwrap().starts_with("t,agent,y_1,x_1"));

    pcdpem(&["identify", "--config", c, "--seed", "7", "--data", &s(&dir("sim")), "--out", &s(&dir("id"))]);
    let history = fs::read_to_string(dir("id").join("history.csv")).unwrap();
    assert!(history.starts_with("k,a,b,s,w,qbar,delta_qbar,rounds,seconds"));

    pcdpem(&["montecarlo", "--config", c, "--particles", "20", "--out", &s(&dir("mc"))]);
    assert_eq!(manifest(&dir("mc"))["config"]["particles"], 20);
    assert_eq!(fs::read_to_string(dir("mc").join("mc_runs.csv")).unwrap().lines().count(), 3);
    let report = pcdpem(&["report", &s(&dir("mc"))]);
    assert!(report.contains("-0.2003"));

    pcdpem(&["sweep", "--config", c, "--axis", "coupling", "--values", "2,4", "--repetitions", "1", "--out", &s(&dir("sw"))]);
    assert_eq!(fs::read_to_string(dir("sw").join("sweep_summary.csv")).unwrap().lines().count(), 3);
}

#[test]
fn paper_scale_flag_and_bad_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("topo");
    pcdpem(&["topology", "--paper-scale", "--out", out.to_str().unwrap()]);
    let m = manifest(&out);
    assert_eq!(m["config"]["agents"], 100);
    assert_eq!(m["paper_scale"], true);

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "repetitions = 0\n").unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_pcdpem")).args(["topology", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]).output().unwrap();
    assert!(!status.status.success());
    fs::write(&bad, "particels = 3\n").unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_pcdpem")).args(["topology", "--config", bad.to_str().unwrap()]).output().unwrap();
    assert!(!status.status.success());
}
