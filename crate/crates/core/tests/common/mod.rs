#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_expltune");

/// A small but complete experiment config: tiny model, few steps.
pub const SMALL_CONFIG: &str = r#"{
  "seed": 3,
  "dimension": "comprehensiveness",
  "fixture": { "n": 90, "min_assessment_words": 160 },
  "mix": { "per_source": 30, "min_expl_words": 150 },
  "model": {
    "n_blocks": 2, "d_model": 16, "n_heads": 2, "d_ff": 24,
    "vocab_size": 384, "context_len": 256, "lora_rank": 2, "lora_alpha": 4.0
  },
  "train": {
    "optimizer": { "lr": 0.004, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "weight_decay": 0.01 },
    "batch_size": 8, "epochs": 2, "train_size": 40, "test_size": 20, "log_every": 2
  },
  "pretrain": {
    "steps": 12, "batch_size": 4,
    "optimizer": { "lr": 0.003, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "weight_decay": 0.0 }
  }
}"#;

pub fn expltune(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

pub fn ok(args: &[&str]) -> Output {
    let out = expltune(args);
    assert!(
        out.status.success(),
        "expltune {}\nstderr: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Runs every subcommand once under `root`; returns the written directories.
pub fn pipeline(root: &Path) -> Vec<PathBuf> {
    std::fs::create_dir_all(root).unwrap();
    let cfg = root.join("config.json");
    std::fs::write(&cfg, SMALL_CONFIG).unwrap();
    let c = s(&cfg).to_string();
    let d = |name: &str| root.join(name);
    let base = ["--config", c.as_str()];
    let run = |rest: &[&str]| {
        let mut args: Vec<&str> = rest.to_vec();
        args.extend_from_slice(&base);
        ok(&args)
    };

    run(&["dataset", "build", "--out", s(&d("coqa")), "--source", "coqa"]);
    run(&[
        "dataset",
        "build",
        "--out",
        s(&d("hh-c")),
        "--source",
        "hh-c",
        "--seed",
        "4",
    ]);
    let coqa = d("coqa").join("corpus.jsonl");
    let hhc = d("hh-c").join("corpus.jsonl");
    run(&[
        "dataset",
        "merge",
        "--out",
        s(&d("merged")),
        "--corpus",
        s(&coqa),
        "--strategy",
        "average",
    ]);
    run(&[
        "calibrate",
        "--out",
        s(&d("calibration")),
        "--judgments",
        s(&d("merged").join("judgments.jsonl")),
        "--golden",
        s(&coqa),
    ]);
    run(&[
        "dataset",
        "mix",
        "--out",
        s(&d("mixed")),
        "--corpus",
        s(&coqa),
        "--corpus",
        s(&hhc),
    ]);
    run(&[
        "dataset",
        "augment",
        "--out",
        s(&d("w-shuffle")),
        "--corpus",
        s(&coqa),
        "--random",
        "w-shuffle",
    ]);

    run(&[
        "train",
        "--out",
        s(&d("train-none")),
        "--corpus",
        s(&coqa),
        "--mode",
        "none",
    ]);
    let base_ckpt = d("train-none").join("base.ckpt");
    run(&[
        "train",
        "--out",
        s(&d("train-both")),
        "--corpus",
        s(&coqa),
        "--mode",
        "both",
        "--base",
        s(&base_ckpt),
    ]);
    let none = d("train-none").join("adapters.ckpt");
    let both = d("train-both").join("adapters.ckpt");
    run(&[
        "cross-eval",
        "--out",
        s(&d("cross-eval")),
        "--checkpoint",
        s(&none),
        "--checkpoint",
        s(&both),
        "--corpus",
        s(&coqa),
        "--corpus",
        s(&hhc),
        "--base",
        s(&base_ckpt),
    ]);
    run(&[
        "analyze",
        "entropy",
        "--out",
        s(&d("entropy")),
        "--explained",
        s(&both),
        "--plain",
        s(&none),
        "--corpus",
        s(&hhc),
    ]);
    run(&[
        "analyze",
        "lora-diff",
        "--out",
        s(&d("lora-diff")),
        "--explained",
        s(&both),
        "--plain",
        s(&none),
    ]);
    run(&[
        "analyze",
        "rank",
        "--out",
        s(&d("rank")),
        "--checkpoint",
        s(&both),
        "--corpus",
        s(&hhc),
    ]);
    let dirs = [
        "coqa",
        "hh-c",
        "merged",
        "calibration",
        "mixed",
        "w-shuffle",
        "train-none",
        "train-both",
        "cross-eval",
        "entropy",
        "lora-diff",
        "rank",
    ];
    let mut report = vec!["report", "--out"];
    let rep = d("report");
    report.push(s(&rep));
    let paths: Vec<PathBuf> = dirs.iter().map(|n| d(n)).collect();
    for p in &paths {
        report.push("--input");
        report.push(s(p));
    }
    run(&report);
    let mut all = paths;
    all.push(rep);
    all
}

/// Relative paths of every file with one of `exts` below `root`, sorted.
pub fn files_with(root: &Path, exts: &[&str]) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p
                .extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| exts.contains(&x))
            {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// Header row of an artifact CSV, after the provenance comment line.
pub fn header(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let first = lines.next().unwrap();
    assert!(first.starts_with("# config_hash="), "{}: {first}", path.display());
    lines.next().unwrap().to_string()
}
