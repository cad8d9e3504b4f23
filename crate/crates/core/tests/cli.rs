mod common;

use common::*;
use expltune::artifact::*;

#[test]
fn pipeline_writes_declared_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    pipeline(root);
    let expect: [(&str, &[&str]); 11] = [
        ("coqa/score_distribution.csv", &SCORE_DIST_HEADER),
        ("mixed/nonstopword_profile.csv", &PROFILE_HEADER),
        ("mixed/token_length_histogram.csv", &LENGTH_HEADER),
        ("mixed/word_frequencies.csv", &WORD_FREQ_HEADER),
        ("calibration/calibration.csv", &CALIBRATION_HEADER),
        ("train-none/loss.csv", &LOSS_HEADER),
        ("train-both/loss.csv", &LOSS_HEADER),
        ("cross-eval/eval.csv", &EVAL_HEADER),
        ("entropy/entropy.csv", &ENTROPY_HEADER),
        ("lora-diff/weight_diff.csv", &WEIGHT_DIFF_HEADER),
        ("rank/rank.csv", &RANK_HEADER),
    ];
    for (rel, want) in expect {
        assert_eq!(header(&root.join(rel)), want.join(","), "{rel}");
    }
    for dir in ["coqa", "merged", "train-none", "cross-eval", "report"] {
        let m: serde_json::Value =
            serde_json::from_slice(&std::fs::read(root.join(dir).join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m["code_version"], CODE_VERSION);
        assert!(m["config_hash"].as_str().unwrap().len() == 64);
    }

    // the adapter-only checkpoint is paired with the base saved next to it
    assert!(root.join("train-none/base.ckpt").exists());
    assert!(!root.join("train-both/base.ckpt").exists());

    let eval = std::fs::read_to_string(root.join("cross-eval/eval.csv")).unwrap();
    let rows: Vec<&str> = eval.lines().skip(2).collect();
    // baseline plus two checkpoints, each on two corpora
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().any(|r| r.starts_with("baseline,")));
    assert!(rows.iter().any(|r| r.starts_with("coqa,both,hh-c,")));

    let figures: serde_json::Value =
        serde_json::from_slice(&std::fs::read(root.join("report/figures.json")).unwrap()).unwrap();
    assert!(figures["figures"].as_array().unwrap().len() >= 11);
}

#[test]
fn fully_random_without_dictionary_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fix");
    ok(&["dataset", "build", "--out", s(&out), "--n", "10"]);
    let corpus = out.join("corpus.jsonl");
    for spelling in ["fully", "fully-random"] {
        let r = expltune(&[
            "dataset",
            "augment",
            "--out",
            s(&tmp.path().join("aug")),
            "--corpus",
            s(&corpus),
            "--mode",
            spelling,
        ]);
        assert_eq!(r.status.code(), Some(2), "{spelling}");
        assert!(String::from_utf8_lossy(&r.stderr).contains("--dictionary"));
    }
    assert!(!tmp.path().join("aug").exists());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let r = expltune(&["train", "--bogus"]);
    assert_eq!(r.status.code(), Some(2));
    let r = expltune(&["train", "--out", s(tmp.path()), "--corpus", "/nonexistent/corpus.jsonl"]);
    assert_eq!(r.status.code(), Some(1));
    let err = String::from_utf8_lossy(&r.stderr);
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error: "));
    let r = expltune(&["--version"]);
    assert_eq!(r.status.code(), Some(0));
}

#[test]
fn config_schema_version_is_checked() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"schema_version": 99}"#).unwrap();
    let r = expltune(&[
        "dataset",
        "build",
        "--out",
        s(&tmp.path().join("o")),
        "--config",
        s(&cfg),
    ]);
    assert_eq!(r.status.code(), Some(1));
    std::fs::write(&cfg, r#"{"no_such_field": 1}"#).unwrap();
    let r = expltune(&[
        "dataset",
        "build",
        "--out",
        s(&tmp.path().join("o")),
        "--config",
        s(&cfg),
    ]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn strict_schema_rejects_unknown_record_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let fix = tmp.path().join("fix");
    ok(&["dataset", "build", "--out", s(&fix), "--n", "3"]);
    let text = std::fs::read_to_string(fix.join("corpus.jsonl")).unwrap();
    let edited = text.replacen("\"source\":", "\"extra\":1,\"source\":", 1);
    let bad = tmp.path().join("bad.jsonl");
    std::fs::write(&bad, edited).unwrap();
    ok(&[
        "dataset",
        "build",
        "--out",
        s(&tmp.path().join("lenient")),
        "--input",
        s(&bad),
    ]);
    let r = expltune(&[
        "dataset",
        "build",
        "--out",
        s(&tmp.path().join("strict")),
        "--input",
        s(&bad),
        "--strict-schema",
    ]);
    assert_eq!(r.status.code(), Some(1));
}
