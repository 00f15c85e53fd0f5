use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn otlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_otlab"))
        .args(args)
        .output()
        .expect("spawn otlab")
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path
}

fn stability_config() -> Value {
    json!({
        "source": {
            "distribution": {"kind": "uniform-box", "lo": [0.0], "hi": [1.0]},
            "scheme": "grid1d",
            "m": 120
        },
        "targets": {
            "base": {
                "points": [[0.1], [0.35], [0.6], [0.9]],
                "weights": [0.3, 0.2, 0.3, 0.2]
            },
            "family": {"levels": 4}
        },
        "cost": {"p": 2.0},
        "seed": 11
    })
}

fn run_in(dir: &Path, cmd: &str, config: &Path, extra: &[&str]) -> Output {
    let out = dir.join("out");
    let mut args = vec![
        cmd,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    otlab(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn malformed_json_reports_position_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\n  \"seed\": 1,\n  \"cost\": {\"p\": }\n}\n").unwrap();
    let o = run_in(dir.path(), "solve", &path, &[]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("bad.json:3:"), "{msg}");
}

#[test]
fn missing_config_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), "solve", &dir.path().join("nope.json"), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn single_target_solve_has_zero_residual() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = stability_config();
    cfg["targets"] = json!({"base": {"points": [[0.4]], "weights": [1.0]}});
    let path = write_config(dir.path(), "one.json", &cfg);
    let o = run_in(dir.path(), "solve", &path, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let sol: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/solution.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(sol["residual"].as_f64(), Some(0.0));
    assert_eq!(sol["provenance"]["seed"].as_u64(), Some(11));
    for f in ["phi.csv", "psi.csv"] {
        let text = std::fs::read_to_string(dir.path().join("out").join(f)).unwrap();
        assert!(text.lines().last().unwrap().starts_with("# config_hash="));
        assert!(!text.contains('\r'));
    }
}

#[test]
fn stability_csv_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "s.json", &stability_config());
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        let o = otlab(&[
            "stability-pot",
            "--config",
            path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        outputs.push(std::fs::read(out.join("report.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs[0].clone()).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "instance_id,p,eps_final,w1_gap,pot_l2_gap,var_gap,map_l2_gap,pairing,m_bound,bound_ok"
    );
    assert_eq!(text.lines().count(), 1 + 12 + 1);
    assert!(text.lines().last().unwrap().contains("seed=11"));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "s.json", &stability_config());
    let o = run_in(dir.path(), "stability-map", &path, &["--seed", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["provenance"]["seed"].as_u64(), Some(5));
    assert_eq!(report["kind"].as_str(), Some("maps"));
    assert!(report["theta_theory"].as_f64().is_some());
    assert!(report["theta_fit"].as_f64().is_some());
}

#[test]
fn p2_potential_report_carries_theory_exponent() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "s.json", &stability_config());
    let o = run_in(dir.path(), "stability-pot", &path, &["--oracle"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["theta_theory"].as_f64(), Some(0.5));
    assert_eq!(report["bound_violations"].as_u64(), Some(0));
}

#[test]
fn low_exponent_map_run_has_small_theory_exponent() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = stability_config();
    cfg["cost"] = json!({"p": 1.5});
    let path = write_config(dir.path(), "s.json", &cfg);
    let o = run_in(dir.path(), "stability-map", &path, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report.json")).unwrap())
            .unwrap();
    let theta = report["theta_theory"].as_f64().unwrap();
    assert!(theta > 0.0 && theta < 1.0 / 15.0, "{theta}");
}

#[test]
fn empty_family_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = stability_config();
    cfg["targets"]["family"] = json!({"kinds": []});
    let path = write_config(dir.path(), "s.json", &cfg);
    let o = run_in(dir.path(), "stability-pot", &path, &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn short_family_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = stability_config();
    cfg["targets"]["family"] = json!({"levels": 3});
    let path = write_config(dir.path(), "s.json", &cfg);
    let o = run_in(dir.path(), "stability-pot", &path, &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn starved_solver_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = stability_config();
    cfg["solver"] = json!({"max_iters": 1, "tol_marginal": 1e-14});
    let path = write_config(dir.path(), "s.json", &cfg);
    let o = run_in(dir.path(), "solve", &path, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let o = run_in(dir.path(), "stability-pot", &path, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn verify_runs_only_the_selected_suite() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "v.json", &json!({"verify": {"instances": 6}}));
    let o = run_in(dir.path(), "verify", &path, &["--suite", "hessians"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 1, "{stdout}");
    assert!(lines[0].starts_with("PASS hessians"));
    assert!(dir.path().join("out/verify.json").exists());
}

#[test]
fn halved_gamma_fails_curvature_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"verify": {"gamma_scale": 0.5, "curvature_samples": 10000}});
    let path = write_config(dir.path(), "v.json", &cfg);
    let o = run_in(dir.path(), "verify", &path, &["--suite", "curvature"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("FAIL curvature"));
    assert!(stderr(&o).contains("curvature"));
}

#[test]
fn unknown_suite_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "v.json", &json!({}));
    let o = run_in(dir.path(), "verify", &path, &["--suite", "everything"]);
    assert_eq!(o.status.code(), Some(2));
}
