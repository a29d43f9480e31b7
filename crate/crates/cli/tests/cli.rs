use std::path::Path;
use std::process::Command;

fn netdyn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_netdyn"))
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let cfg = format!(
        r#"{{
            "seed": 3,
            "out_dir": "run",
            "topology": {{"source": {{"kind": "er", "n": 8, "p": 0.4}}}},
            "dynamics": {{"model": "Epi", "t_train": 0.5, "t_end": 1.0}},
            "preprocess": {{"interval": "full", "s_steps": 40}},
            "decoupler": {{"epochs": 20, "eval_every": 5, "arch": {{"hidden": 8}}}},
            "symreg": {{"n_raw": 400, "k": 32, "backend": {{"sparse": {{"self_library": ["1", "xi"], "inter_library": ["xj", "xi * xj"]}}}}}},
            "termination": {{"max_rounds": 1}}{extra}
        }}"#
    );
    let path = dir.join("config.json");
    std::fs::write(&path, cfg).unwrap();
    path
}

#[test]
fn pipeline_then_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = tmp.path().join("run");
    let status = netdyn()
        .args(["pipeline", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(out.join("round1/discovered.json").is_file());
    let resumed = netdyn()
        .args(["pipeline", "--resume", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(resumed.status.success());
    let report = netdyn()
        .args(["report", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(report.status.success());
    assert!(String::from_utf8_lossy(&report.stdout).contains("Round 1"));
    assert!(out.join("report.json").is_file());
}

#[test]
fn simulate_writes_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let status = netdyn()
        .args(["simulate", "--seed", "9", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(tmp.path().join("run/trajectory.csv").is_file());
    assert!(!tmp.path().join("run/round1").exists());
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#", "unknown_block": 1"#);
    let out = netdyn()
        .args(["pipeline", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let missing = netdyn()
        .args(["simulate", "--config"])
        .arg(tmp.path().join("absent.json"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn missing_topology_file_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let text = std::fs::read_to_string(&cfg).unwrap().replace(
        r#"{"kind": "er", "n": 8, "p": 0.4}"#,
        r#"{"kind": "file", "path": "nope.edges"}"#,
    );
    std::fs::write(&cfg, text).unwrap();
    let out = netdyn()
        .args(["pipeline", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("run").exists());
}

#[test]
fn bifurcate_scans_true_model() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!(
        r#"{{
            "seed": 1,
            "out_dir": "run",
            "topology": {{"source": {{"kind": "ba", "n": 4, "m": 1}}}},
            "dynamics": {{"model": "Rossler", "t_train": 1.0, "t_end": 2.0}},
            "termination": {{"max_rounds": 0}},
            "bifurcation": {{
                "param": "c",
                "values": [2.5, 3.5],
                "scan": {{"run": {{"t_end": 300.0, "dt_out": 0.01, "rtol": 1e-8, "atol": 1e-8}}}}
            }}
        }}"#
    );
    let path = tmp.path().join("config.json");
    std::fs::write(&path, cfg).unwrap();
    let out = netdyn()
        .args(["bifurcate", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(tmp.path().join("run/bifurcation.csv").is_file());
    let counts: Vec<(f64, usize)> = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(counts.len(), 2);
    assert!(counts.iter().all(|(_, k)| *k >= 1));
}
