//! Command-line contract: exit codes, output formats, and agreement with the
//! library on fixtures.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use hcg::ingest::{load_truths, read_labels};
use hcg::ThresholdSet;

use common::fixture;

fn hcg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hcg")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = hcg(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let out = hcg(&[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn usage_errors_exit_1() {
    for args in [
        vec!["frobnicate"],
        vec!["evaluate"],
        vec!["sweep", "--manifest", "m.json", "--mode", "13pt"],
        vec!["scores", "--manifest", "m.json", "--method", "psychic"],
    ] {
        let out = hcg(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    let m = path(&fixture("eval3/manifest.json"));
    let out = hcg(&["simulate", "--manifest", &m, "--policy", "semantic"]);
    assert_eq!(out.status.code(), Some(1), "semantic policy without thresholds");
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = hcg(&["evaluate", "--manifest", &path(&dir.path().join("missing.json"))]);
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("manifest.json");
    std::fs::write(&bad, r#"{"class_names":["a"],"truths":"t.jsonl","small":"s.jsonl"}"#).unwrap();
    std::fs::write(dir.path().join("t.jsonl"), "{\"image_id\":\"x\",\"width\":0,\"height\":4,\"objects\":[]}\n").unwrap();
    std::fs::write(dir.path().join("s.jsonl"), "").unwrap();
    let out = hcg(&["evaluate", "--manifest", &path(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));

    // no big traces to label from
    let out = hcg(&["label-cases", "--manifest", &path(&fixture("eval3/manifest.json"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn evaluate_matches_committed_oracle() {
    let expected: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("eval3/expected.json")).unwrap()).unwrap();
    let m = path(&fixture("eval3/manifest.json"));
    for mode in ["11pt", "allpt"] {
        let report: serde_json::Value = serde_json::from_str(&ok(&["evaluate", "--manifest", &m, "--mode", mode])).unwrap();
        let exp = &expected[mode];
        assert_eq!(report["ap_mode"], mode);
        assert_eq!(report["detected_objects"], exp["detected_objects"]);
        assert!((report["map"].as_f64().unwrap() - exp["map"].as_f64().unwrap()).abs() < 1e-9);
        for c in ["0", "1"] {
            let (got, want) = (report["per_class_ap"][c].as_f64().unwrap(), exp["per_class_ap"][c].as_f64().unwrap());
            assert!((got - want).abs() < 1e-9, "{mode} class {c}");
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let ap = dir.path().join("ap.csv");
    ok(&["evaluate", "--manifest", &m, "--out", &path(&dir.path().join("r.json")), "--ap-out", &path(&ap)]);
    assert_eq!(std::fs::read_to_string(ap).unwrap(), "class_id,class_name,ap\n0,cat,0.636364\n1,dog,1\n");
}

#[test]
fn import_voc_reproduces_fixture_truths() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("truths.jsonl");
    let res = hcg(&["import-voc", "--annotations", &path(&fixture("voc")), "--classes", "cat,dog", "--out", &path(&out)]);
    assert!(res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("skipped 1"));
    assert_eq!(load_truths(&out).unwrap(), load_truths(&fixture("eval3/truths.jsonl")).unwrap());
}

#[test]
fn calibrate_then_discriminate_on_planted_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("planted");
    ok(&["synth-gen", "--planted", "--out", &path(&data)]);
    let m = path(&data.join("manifest.json"));
    let t = dir.path().join("t.json");
    ok(&["calibrate", "--manifest", &m, "--out", &path(&t)]);
    let text = std::fs::read_to_string(&t).unwrap();
    let thresholds: ThresholdSet = serde_json::from_str(&text).unwrap();
    assert_eq!(thresholds.tau_n, 2);
    assert!((thresholds.tau_a - 0.31).abs() <= 0.01 + 1e-12);
    assert!(text.starts_with(r#"{"tau_a":"#));

    let labels = ok(&["discriminate", "--manifest", &m, "--thresholds", &path(&t)]);
    let labels = read_labels(labels.as_bytes()).unwrap();
    let ds = hcg::Dataset::load(Path::new(&m)).unwrap();
    assert_eq!(labels.len(), ds.truths.len());
    for (id, l) in &labels {
        assert_eq!(*l, hcg::discriminator::discriminate(&ds.small[id], &thresholds), "{id}");
    }
}

#[test]
fn scores_and_sweep_csv_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    ok(&["synth-gen", "--images", "50", "--out", &path(&data)]);
    let m = path(&data.join("manifest.json"));
    let csv = ok(&["scores", "--manifest", &m, "--method", "random", "--seed", "3"]);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("image_id,method,score"));
    assert_eq!(lines.clone().count(), 50);
    assert!(lines.all(|l| l.split(',').nth(1) == Some("random")));

    let sweep = ok(&["sweep", "--manifest", &m, "--method", "top1", "--ratio", "0,0.5,1"]);
    let rows: Vec<&str> = sweep.lines().collect();
    assert_eq!(rows[0], "target_ratio,achieved_ratio,map,detected_objects,total_time_s,uploaded_bytes");
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("0,0,"));
    assert!(rows[3].starts_with("1,1,"));
    assert!(rows[3].ends_with(",5000000"));

    let out = hcg(&["sweep", "--manifest", &m, "--method", "top1", "--ratio", "0.5,0.2"]);
    assert_eq!(out.status.code(), Some(2), "descending ratios");
}

#[test]
fn offline_edge_reports_fallbacks() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    ok(&["synth-gen", "--images", "80", "--out", &path(&data)]);
    let m = path(&data.join("manifest.json"));
    let t = dir.path().join("t.json");
    std::fs::write(&t, r#"{"tau_s":0.11,"tau_n":0,"tau_a":0.01}"#).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&ok(&["run-edge", "--manifest", &m, "--thresholds", &path(&t), "--offline"])).unwrap();
    assert!(report["fallback_count"].as_u64().unwrap() > 0);
    assert_eq!(report["frames_sent"], 0);
    let edge_only: serde_json::Value =
        serde_json::from_str(&ok(&["evaluate", "--manifest", &m])).unwrap();
    assert_eq!(report["metrics"], edge_only);
}
