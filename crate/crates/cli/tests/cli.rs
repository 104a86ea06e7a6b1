use std::path::Path;
use std::process::{Command, Output};

fn sgdk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgdk")).args(args).output().expect("spawn sgdk")
}

fn ok(args: &[&str]) -> String {
    let out = sgdk(args);
    assert!(
        out.status.success(),
        "sgdk {args:?} failed: {}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn pipeline_from_models_to_summary() {
    let dir = tempfile::tempdir().unwrap();
    let models = dir.path().join("models");
    let listed = ok(&["gen-models", "--family", "qc", "--seed", "2024", "--out", path(&models)]);
    assert_eq!(listed.lines().count(), 4);
    let model1 = models.join("qc-model-1.json");
    assert!(model1.exists());

    let table = dir.path().join("thresholds.csv");
    ok(&["thresholds", "--model", path(&model1), "--k", "1,10,inf", "--samples", "200", "--out", path(&table)]);
    let text = std::fs::read_to_string(&table).unwrap();
    assert!(text.starts_with("model,k,regime,conv_ub,div_lb"));
    assert_eq!(text.lines().count(), 1 + 2 * 3);

    let plan_path = dir.path().join("plan.json");
    ok(&["plan", "--family", "qc", "--out", path(&plan_path)]);
    let mut plan: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&plan_path).unwrap()).unwrap();
    plan["model_files"] = serde_json::json!(["models/qc-model-1.json"]);
    plan["runs_per_cell"] = 3.into();
    plan["max_iters"] = 5.into();
    std::fs::write(&plan_path, serde_json::to_string_pretty(&plan).unwrap()).unwrap();

    let traj = dir.path().join("traj.csv");
    ok(&["run", "--plan", path(&plan_path), "--out", path(&traj)]);
    // 2 minimizers x 2 methods x 6 rates x 3 runs x 6 iterates
    assert_eq!(std::fs::read_to_string(&traj).unwrap().lines().count(), 1 + 2 * 2 * 6 * 3 * 6);

    let summary = dir.path().join("summary.csv");
    let json = dir.path().join("summary.json");
    let figures = dir.path().join("figures");
    ok(&[
        "summarize", "--in", path(&traj), "--out", path(&summary),
        "--json", path(&json), "--figures", path(&figures),
    ]);
    assert_eq!(std::fs::read_to_string(&summary).unwrap().lines().count(), 1 + 24);
    let parsed: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(parsed.as_array().unwrap().len(), 24);
    assert_eq!(std::fs::read_dir(&figures).unwrap().count(), 24);
}

#[test]
fn verify_exit_status_follows_the_checks() {
    let out = ok(&["verify", "--only", "2"]);
    assert!(out.contains("PASS"), "{out}");
    let failing = sgdk(&["verify", "--only", "10"]);
    assert_eq!(failing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&failing.stdout).contains("FAIL"));
    assert_eq!(sgdk(&["verify", "--only", "11"]).status.code(), Some(2));
}
