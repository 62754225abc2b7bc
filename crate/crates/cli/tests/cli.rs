use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn hvsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hvsim"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn error_line(out: &Output) -> Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().expect("stderr line");
    serde_json::from_str(last).expect("machine-readable error line")
}

fn write_json(path: &Path, v: &Value) {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

fn tiny_dataset(dir: &Path) {
    write_json(
        &dir.join("synth.json"),
        &json!({ "out_dir": "data", "dims": { "nx": 8, "ny": 8, "nz": 4 }, "levels": [0, 1, 2], "per_class": 6 }),
    );
    let out = hvsim(&["synth", dir.join("synth.json").to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(v["stacks"], 36);
    assert!(dir.join("data/manifest.json").exists());
}

#[test]
fn synth_run_report_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_dataset(d);
    write_json(&d.join("run.json"), &json!({ "dataset": { "path": "data" }, "bootstrap": { "resamples": 200, "seed": 7 } }));
    let run_cfg = d.join("run.json");
    let out = hvsim(&["run", run_cfg.to_str().unwrap(), "--out", d.join("r1").to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(d.join("r1/results.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "model,method,complexity,auc,ci_low,ci_high,n_train,n_test,ms");
    assert_eq!(csv.lines().count(), 1 + 6 * 3);

    let out = hvsim(&["run", run_cfg.to_str().unwrap(), "--out", d.join("r2").to_str().unwrap(), "--threads", "1"]);
    assert!(out.status.success());
    assert_eq!(csv, std::fs::read_to_string(d.join("r2/results.csv")).unwrap());

    // no output dir: CSV on stdout
    let out = hvsim(&["run", run_cfg.to_str().unwrap()]);
    assert_eq!(stdout(&out), csv);

    let out = hvsim(&["report", d.join("r1/results.csv").to_str().unwrap()]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("spearman csf_plus_masking PM"));
    let out = hvsim(&["report", d.join("r1/results.json").to_str().unwrap(), "--json"]);
    let v: Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 18);
    assert!(v["trend"]["variants"].is_array());
}

#[test]
fn perceive_one_stack() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_dataset(d);
    write_json(&d.join("run.json"), &json!({ "dataset": { "path": "data" } }));
    let cfg = d.join("run.json");
    let out = hvsim(&["perceive", cfg.to_str().unwrap(), "c1-s00002-l", "--out", d.join("p").to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<Value> = stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 6);
    for l in &lines {
        assert!(l["rms"].as_f64().unwrap() > 0.0);
        let path = l["path"].as_str().unwrap();
        assert_eq!(std::fs::metadata(path).unwrap().len(), 8 * 8 * 4 * 4);
    }

    let err = error_line(&hvsim(&["perceive", cfg.to_str().unwrap(), "nope"]));
    assert_eq!(err["error"], "unknown_stack");
}

fn rec(observer: &str, level: u8, label: &str, score: u8, i: usize) -> String {
    json!({
        "stack_id": format!("c{level}-s{i:05}-{}", &label[..1]),
        "label": label, "complexity": level, "score": score,
        "observer_id": observer, "presentations": 1, "elapsed_ms": 4000
    })
    .to_string()
}

#[test]
fn study_analyze_table_one() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("scores.jsonl");
    let mut lines = Vec::new();
    for (observer, hits) in [("A", [34, 27, 9]), ("B", [28, 25, 12])] {
        for (level, h) in [0u8, 2, 4].into_iter().zip(hits) {
            for i in 0..35 {
                lines.push(rec(observer, level, "lesion", if i < h { 2 + (i % 2) as u8 } else { (i % 2) as u8 }, i));
                lines.push(rec(observer, level, "healthy", (i % 3) as u8, i));
            }
        }
    }
    std::fs::write(&log, lines.join("\n") + "\n").unwrap();
    let out = hvsim(&["study-analyze", log.to_str().unwrap(), "--json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    let want = [("A", [0.9714, 0.7714, 0.2571]), ("B", [0.8000, 0.7143, 0.3429])];
    for (observer, fractions) in want {
        for (level, f) in ["0", "2", "4"].into_iter().zip(fractions) {
            let got = v[observer]["percent_correct"][level].as_f64().unwrap();
            assert_eq!(format!("{got:.4}"), format!("{f:.4}"), "{observer} {level}");
        }
        assert!(v[observer]["auc"]["0"]["auc"].as_f64().unwrap() > 0.5);
    }
    let out = hvsim(&["study-analyze", log.to_str().unwrap()]);
    assert!(stdout(&out).contains("percent correct 0.9714"));
}

#[test]
fn failures_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let err = error_line(&hvsim(&["run", dir.path().join("missing.json").to_str().unwrap()]));
    assert_eq!(err["error"], "io");
    assert!(err["message"].as_str().unwrap().contains("missing.json"));

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"stack_id\": 1}\n").unwrap();
    let err = error_line(&hvsim(&["study-analyze", bad.to_str().unwrap()]));
    assert_eq!(err["error"], "invalid_param");

    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(error_line(&hvsim(&["study-analyze", empty.to_str().unwrap()]))["error"], "empty_log");

    let cfg = dir.path().join("study.json");
    write_json(&cfg, &json!({ "dataset": "nowhere", "state_dir": "state" }));
    let err = error_line(&hvsim(&["study-serve", cfg.to_str().unwrap()]));
    assert!(err["error"].is_string());
}
