use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ramia(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ramia"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_dir(out: &Output) -> PathBuf {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    PathBuf::from(String::from_utf8(out.stdout.clone()).unwrap().trim())
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn error_json(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().unwrap_or_default();
    serde_json::from_str(last).unwrap_or_else(|_| panic!("stderr: {stderr}"))
}

const SIM_CONFIG: &str = r#"{
  "seed": 5,
  "simulator": {"n_records": 200, "n_features": 24, "z_size": 50, "n_games": 60,
                "ranges": {"kind": "masked-columns", "k": 4}},
  "sampler": {"n_samples": 6},
  "trim": {"mode": "sweep", "branch": "synthetic", "step": 25},
  "repeat": {"seeds": [1, 2]}
}"#;

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("cfg.json"), SIM_CONFIG).unwrap();
    let mut snapshots = Vec::new();
    for (out_dir, jobs) in [("a", "1"), ("b", "2")] {
        let mut dir = None;
        for cmd in ["simulate", "sample", "mia", "sweep", "ramia", "eval", "repeat"] {
            let out = ramia(tmp.path(), &["--config", "cfg.json", "--out-dir", out_dir, "--jobs", jobs, cmd]);
            dir = Some(run_dir(&out));
        }
        snapshots.push(snapshot(&tmp.path().join(dir.unwrap())));
    }
    assert_eq!(snapshots[0].keys().collect::<Vec<_>>(), snapshots[1].keys().collect::<Vec<_>>());
    for (name, bytes) in &snapshots[0] {
        assert!(bytes == &snapshots[1][name], "{name} differs between runs");
    }
    for name in ["summary.json", "repeat.json", "trim.json", "degradation.json", "roc.csv", "roc_mia.csv"] {
        assert!(snapshots[0].contains_key(name), "missing {name}");
    }

    // Forced recomputation in place reproduces the same bytes.
    let out = ramia(tmp.path(), &["--config", "cfg.json", "--out-dir", "a", "--force", "eval"]);
    let dir = tmp.path().join(run_dir(&out));
    let again = snapshot(&dir);
    for (name, bytes) in &again {
        assert!(bytes == &snapshots[0][name], "{name} differs after --force");
    }
}

#[test]
fn run_directory_follows_config_hash() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("cfg.json"), SIM_CONFIG).unwrap();
    let a = run_dir(&ramia(tmp.path(), &["--config", "cfg.json", "simulate"]));
    let b = run_dir(&ramia(tmp.path(), &["--config", "cfg.json", "--seed", "6", "simulate"]));
    assert_ne!(a, b);
    assert!(tmp.path().join(&a).join("config.json").exists());
    let summary_free = snapshot(&tmp.path().join(&a));
    assert!(!summary_free.contains_key("summary.json"));
}

#[test]
fn exit_codes_and_structured_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ramia(tmp.path(), &["simulate"]);
    assert_eq!(out.status.code(), Some(2));

    let out = ramia(tmp.path(), &["--config", "missing.json", "simulate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "config");

    std::fs::write(tmp.path().join("typo.json"), r#"{"seeed": 1}"#).unwrap();
    let out = ramia(tmp.path(), &["--config", "typo.json", "simulate"]);
    assert_eq!(out.status.code(), Some(2));

    let out = ramia(tmp.path(), &["--config", "typo.json", "frobnicate"]);
    assert_eq!(out.status.code(), Some(2));

    // No simulator section and no data: the simulate subcommand is misused.
    std::fs::write(tmp.path().join("empty.json"), "{}").unwrap();
    let out = ramia(tmp.path(), &["--config", "empty.json", "simulate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "config");

    // Data run whose signal file does not exist fails in the pipeline.
    std::fs::write(
        tmp.path().join("data.json"),
        r#"{"data": {"signals": "nope.csv", "sidecar": "nope.json", "ranges": "r.json", "population": "p.txt"},
            "scorer": {"kind": "loss"}}"#,
    )
    .unwrap();
    let out = ramia(tmp.path(), &["--config", "data.json", "mia"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"], "io");

    std::fs::write(tmp.path().join("bad_sim.json"), r#"{"simulator": {"sigma": 0}}"#).unwrap();
    let out = ramia(tmp.path(), &["--config", "bad_sim.json", "simulate"]);
    assert_eq!(out.status.code(), Some(2));
}

/// Four point ranges with externally produced signals that separate members
/// perfectly; the sidecar carries extractor metadata beyond the required keys.
fn write_separable_fixture(dir: &Path) {
    std::fs::write(
        dir.join("manifest.json"),
        r#"{"schema": "binary",
            "records": [{"id": 0, "payload": [0,0]}, {"id": 1, "payload": [0,1]},
                        {"id": 2, "payload": [1,0]}, {"id": 3, "payload": [1,1]}],
            "members": [0, 1]}"#,
    )
    .unwrap();
    let ranges: Vec<serde_json::Value> = (0..4)
        .map(|i| {
            serde_json::json!({
                "id": i, "center": {"id": i, "payload": [i / 2, i % 2]},
                "range_fn": "masked-columns", "size": 0, "mask": []
            })
        })
        .collect();
    std::fs::write(dir.join("ranges.json"), serde_json::to_string(&ranges).unwrap()).unwrap();
    std::fs::write(dir.join("sets.json"), r#"{"0": [0], "1": [1], "2": [2], "3": [3]}"#).unwrap();
    std::fs::write(
        dir.join("signals.csv"),
        "id,target,ref_0,ref_1\n0,0.9,0.5,0.5\n1,0.8,0.5,0.5\n2,0.2,0.5,0.5\n3,0.0,0.5,0.5\n",
    )
    .unwrap();
    std::fs::write(
        dir.join("signals.json"),
        r#"{"n_refs": 2, "signal_kind": "prob", "nll_convention": "mean", "inference": "deterministic"}"#,
    )
    .unwrap();
    std::fs::write(dir.join("population.txt"), "2\n3\n").unwrap();
    std::fs::write(
        dir.join("cfg.json"),
        r#"{"data": {"manifest": "manifest.json", "ranges": "ranges.json", "attack_sets": "sets.json",
                     "signals": "signals.csv", "sidecar": "signals.json", "population": "population.txt"},
            "scorer": {"kind": "loss"},
            "trim": {"mode": "fixed", "q_s": 100, "q_e": 100}}"#,
    )
    .unwrap();
}

#[test]
fn eval_on_separable_external_signals() {
    let tmp = tempfile::tempdir().unwrap();
    write_separable_fixture(tmp.path());
    let dir = tmp.path().join(run_dir(&ramia(tmp.path(), &["--config", "cfg.json", "eval"])));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["auc"], 1.0);
    assert_eq!(summary["mia"]["auc"], 1.0);
    assert_eq!(summary["tpr@1%"], 1.0);
    assert_eq!(summary["n_ranges"], 4);
    assert_eq!(std::fs::read_to_string(dir.join("labels.csv")).unwrap(), "range_id,bit\n0,1\n1,1\n2,0\n3,0\n");
    let roc = std::fs::read_to_string(dir.join("roc.csv")).unwrap();
    assert_eq!(roc, "fpr,tpr\n0,0\n0,0.5\n0,1\n0.5,1\n1,1\n");
    let scores = std::fs::read_to_string(dir.join("scores_ramia.csv")).unwrap();
    assert!(scores.starts_with("range_id,score\n0,0.9"), "{scores}");
}

#[test]
fn rmia_run_on_external_signals() {
    let tmp = tempfile::tempdir().unwrap();
    write_separable_fixture(tmp.path());
    let cfg = std::fs::read_to_string(tmp.path().join("cfg.json")).unwrap();
    std::fs::write(tmp.path().join("cfg.json"), cfg.replace(r#""kind": "loss""#, r#""kind": "rmia""#)).unwrap();
    let dir = tmp.path().join(run_dir(&ramia(tmp.path(), &["--config", "cfg.json", "eval"])));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    // Z = {2, 3}: members tie with record 2 and beat record 3, giving scores
    // 1, 1, 1, 0.5 for records 0..3.
    assert_eq!(summary["auc"], 0.75);
    let scores = std::fs::read_to_string(dir.join("scores_mia.csv")).unwrap();
    assert_eq!(scores, "range_id,score\n0,1\n1,1\n2,1\n3,0.5\n");

    // A population record that is also a member is rejected.
    std::fs::write(tmp.path().join("population.txt"), "0\n3\n").unwrap();
    let out = ramia(tmp.path(), &["--config", "cfg.json", "--out-dir", "other", "mia"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "config");
}

#[test]
fn sample_subcommand_on_tabular_ranges() {
    let tmp = tempfile::tempdir().unwrap();
    write_separable_fixture(tmp.path());
    let ranges = r#"[{"id": 7, "center": {"id": 0, "payload": [0,0]}, "range_fn": "masked-columns", "size": 1, "mask": [1]}]"#;
    std::fs::write(tmp.path().join("ranges.json"), ranges).unwrap();
    std::fs::write(tmp.path().join("means.csv"), "index,mean\n0,0.5\n1,0.9\n").unwrap();
    std::fs::write(
        tmp.path().join("cfg.json"),
        r#"{"data": {"manifest": "manifest.json", "ranges": "ranges.json", "column_means": "means.csv"},
            "sampler": {"n_samples": 3, "include_mode_imputed": true, "seed": 11}}"#,
    )
    .unwrap();
    let dir = tmp.path().join(run_dir(&ramia(tmp.path(), &["--config", "cfg.json", "sample"])));
    let sets: BTreeMap<String, Vec<u64>> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("attack_sets.json")).unwrap()).unwrap();
    assert_eq!(sets["7"], vec![4, 5, 6]);
    let candidates: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("candidates.json")).unwrap()).unwrap();
    let records = candidates["records"].as_array().unwrap();
    assert_eq!(records.len(), 3);
    assert_eq!(records[0]["payload"], serde_json::json!([0, 1]), "mode-imputed first sample");
    for r in records {
        assert_eq!(r["payload"][0], 0, "unmasked column kept");
    }
}
