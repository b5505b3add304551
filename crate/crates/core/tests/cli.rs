use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mss_core::reporting::{evaluate, read_label_csv};

fn mss(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mss"))
        .args(args)
        .env_remove("MSS_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = mss(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn synth(dir: &Path) {
    ok(&[
        "synth", "--sources", "24", "--objects", "40", "--kappa", "2", "--seed", "11",
        "--out", dir.to_str().unwrap(),
    ]);
}

#[test]
fn fit_writes_the_three_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let out = tmp.path().join("fit");
    let stdout = ok(&[
        "fit",
        "--claims", data.join("claims.csv").to_str().unwrap(),
        "--domains", data.join("domains.json").to_str().unwrap(),
        "--out", out.to_str().unwrap(),
        "--quiet",
    ])
    .stdout;
    let summary: serde_json::Value = serde_json::from_slice(&stdout).unwrap();
    assert!(summary["elbo"].as_f64().unwrap().is_finite());

    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["objects"].as_array().unwrap().len(), 40);
    assert_eq!(report["sources"].as_array().unwrap().len(), 24);
    assert_eq!(report["config"]["hyperparams"]["kappa"], 5.0);

    let truths = fs::read_to_string(out.join("truths.csv")).unwrap();
    let mut lines = truths.lines();
    assert!(lines.next().unwrap().starts_with("# config={"));
    assert_eq!(lines.next().unwrap(), "object_id,value_label,confidence");
    assert_eq!(lines.count(), 40);

    let reliability = fs::read_to_string(out.join("reliability.csv")).unwrap();
    assert_eq!(reliability.lines().nth(1).unwrap(), "source_id,score,rank,map_group");
    assert_eq!(reliability.lines().count(), 2 + 24);
}

#[test]
fn synth_is_reproducible() {
    let args = ["synth", "--sources", "50", "--objects", "100", "--kappa", "5", "--seed", "7"];
    let a = ok(&args).stdout;
    let b = ok(&args).stdout;
    assert!(!a.is_empty());
    assert_eq!(a, b);
    let other = ok(&["synth", "--sources", "50", "--objects", "100", "--kappa", "5", "--seed", "8"]).stdout;
    assert_ne!(a, other);
}

#[test]
fn eval_matches_the_library() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let out = tmp.path().join("fit");
    ok(&[
        "fit", "--claims", data.join("claims.csv").to_str().unwrap(),
        "--out", out.to_str().unwrap(), "-q",
    ]);
    let pred = out.join("truths.csv");
    let truth = data.join("truth.csv");
    let stdout = ok(&["eval", "--pred", pred.to_str().unwrap(), "--truth", truth.to_str().unwrap()]).stdout;
    let printed: serde_json::Value = serde_json::from_slice(&stdout).unwrap();

    let p = read_label_csv(fs::File::open(&pred).unwrap()).unwrap();
    let t = read_label_csv(fs::File::open(&truth).unwrap()).unwrap();
    let expected = evaluate(&p, &t).unwrap();
    assert_eq!(printed["accuracy"].as_f64().unwrap(), expected.accuracy);
    assert_eq!(printed["correct"].as_u64().unwrap() as usize, expected.correct);
    assert_eq!(printed["covered"].as_u64().unwrap(), 40);
}

#[test]
fn grid_writes_a_full_leaderboard() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let grid = tmp.path().join("grid.json");
    fs::write(
        &grid,
        r#"{"eta_theta_values":[1,4],"b_values":[2],"kappa_values":[1,5],"restarts_per_config":1,"truncation":6}"#,
    )
    .unwrap();
    let out = tmp.path().join("grid");
    ok(&[
        "grid", "--claims", data.join("claims.csv").to_str().unwrap(),
        "--grid", grid.to_str().unwrap(), "--out", out.to_str().unwrap(), "-q",
    ]);
    let board: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("leaderboard.json")).unwrap()).unwrap();
    // (4, 1) reliable × {(1, 1), (1, 4), (4, 4)} unreliable × 2 κ
    assert_eq!(board["entries"].as_array().unwrap().len(), 6);
    assert!(board["config"]["grid"].is_object());
    assert!(out.join("report.json").exists());
    let table = fs::read_to_string(out.join("leaderboard.txt")).unwrap();
    assert_eq!(table.lines().count(), 1 + 1 + 6);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();
    assert_eq!(mss(&["fit", "--out", out]).status.code(), Some(2));
    assert_eq!(mss(&["fit", "--claims", "/nonexistent.csv", "--out", out]).status.code(), Some(1));

    let claims = tmp.path().join("c.csv");
    fs::write(&claims, "source_id,object_id,value_label\na,x,1\na,x,2\n").unwrap();
    let c = claims.to_str().unwrap();
    assert_eq!(mss(&["fit", "--claims", c, "--out", out]).status.code(), Some(1));

    fs::write(&claims, "source_id,object_id,value_label\na,x,1\nb,x,2\n").unwrap();
    assert_eq!(mss(&["fit", "--claims", c, "--out", out, "--kappa", "-1"]).status.code(), Some(2));
    assert_eq!(mss(&["fit", "--claims", c, "--out", out, "--threads", "0"]).status.code(), Some(2));
    assert_eq!(mss(&["fit", "--claims", c, "--out", out, "-q"]).status.code(), Some(0));
}
