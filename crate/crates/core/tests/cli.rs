use std::fs;
use std::path::{Path, PathBuf};

use hale::cli::commands::read_embeddings;
use hale::cli::run;
use hale::trainer::checkpoint::load_checkpoint;

fn hale(args: &[&str]) -> i32 {
    run(std::iter::once("hale").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a 30-entity, 3-relation TSV graph and returns its directory.
fn write_graph(root: &Path) -> PathBuf {
    let dir = root.join("raw");
    fs::create_dir_all(&dir).unwrap();
    let mut lines = Vec::new();
    for r in 0..3 {
        for h in 0..30 - (r + 1) * 2 {
            lines.push(format!("ent_{h}\trel_{r}\tent_{}", h + (r + 1) * 2));
        }
    }
    let (train, rest) = lines.split_at(lines.len() - 10);
    fs::write(dir.join("train.txt"), train.join("\n") + "\n").unwrap();
    fs::write(dir.join("valid.txt"), rest[..5].join("\n") + "\n").unwrap();
    fs::write(dir.join("test.txt"), rest[5..].join("\n") + "\n").unwrap();
    dir
}

const QUICK: [&str; 8] = [
    "--dim",
    "8",
    "--max-epochs",
    "5",
    "--batch-size",
    "16",
    "--eval-interval-epochs",
    "2",
];

#[test]
fn prepare_train_eval_export() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = write_graph(tmp.path());
    let cache = tmp.path().join("cache");
    assert_eq!(hale(&["prepare", "--data", s(&raw), "--out", s(&cache)]), 0);
    assert!(cache.join("triples.bin").exists());

    let run_dir = tmp.path().join("run");
    let mut args = vec![
        "train",
        "--data",
        s(&cache),
        "--out",
        s(&run_dir),
        "--model",
        "rotl",
        "--alpha",
        "0.5",
    ];
    args.extend(QUICK);
    assert_eq!(hale(&args), 0);
    for f in [
        "manifest.json",
        "metrics.jsonl",
        "timing.jsonl",
        "checkpoint.bin",
        "final_eval.json",
        "vocab.json",
    ] {
        assert!(run_dir.join(f).exists(), "{f} missing");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(run_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["alpha"], "0.5");
    assert_eq!(manifest["config"]["model"], "rotl");
    let metrics = fs::read_to_string(run_dir.join("metrics.jsonl")).unwrap();
    let elapsed: Vec<f64> = metrics
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["elapsed_s"]
                .as_f64()
                .unwrap()
        })
        .collect();
    assert!(!elapsed.is_empty());
    assert!(elapsed.windows(2).all(|w| w[0] < w[1]), "{elapsed:?}");

    let ckpt = run_dir.join("checkpoint.bin");
    let report = tmp.path().join("eval.json");
    assert_eq!(
        hale(&[
            "eval",
            "--data",
            s(&raw),
            "--checkpoint",
            s(&ckpt),
            "--out",
            s(&report)
        ]),
        0
    );
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(summary["n_queries"], 10);

    let tsv = tmp.path().join("emb.tsv");
    assert_eq!(
        hale(&["export", "--checkpoint", s(&ckpt), "--out", s(&tsv)]),
        0
    );
    let (names, vecs) = read_embeddings(&tsv).unwrap();
    let ck = load_checkpoint(&ckpt).unwrap();
    assert_eq!(names.len(), ck.parameters.n_entities());
    assert!(names.iter().all(|n| n.starts_with("ent_")));
    for (i, v) in vecs.iter().enumerate() {
        for (a, b) in v.iter().zip(ck.parameters.entity.row(i)) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn deterministic_runs_write_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = write_graph(tmp.path());
    let mut streams = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let mut args = vec![
            "train",
            "--data",
            s(&raw),
            "--out",
            s(&out),
            "--deterministic",
            "--seed",
            "3",
        ];
        args.extend(QUICK);
        assert_eq!(hale(&args), 0);
        streams.push(fs::read(out.join("metrics.jsonl")).unwrap());
    }
    assert!(!streams[0].is_empty());
    assert_eq!(streams[0], streams[1]);
}

#[test]
fn config_file_with_flag_override() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = write_graph(tmp.path());
    let cfg = tmp.path().join("run.cfg");
    fs::write(
        &cfg,
        "# quick run\nmodel = transe\ndim = 4\nmax_epochs = 2\nlambda = 0.3\n",
    )
    .unwrap();
    let out = tmp.path().join("run");
    let code = hale(&[
        "train",
        "--data",
        s(&raw),
        "--out",
        s(&out),
        "--config",
        s(&cfg),
        "--lambda",
        "0.9",
    ]);
    assert_eq!(code, 0);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["model"], "transe");
    assert_eq!(manifest["config"]["lambda"], "0.9");
}

#[test]
fn zero_epochs_gives_empty_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = write_graph(tmp.path());
    let out = tmp.path().join("run");
    assert_eq!(
        hale(&[
            "train",
            "--data",
            s(&raw),
            "--out",
            s(&out),
            "--max-epochs",
            "0"
        ]),
        0
    );
    assert_eq!(fs::read_to_string(out.join("metrics.jsonl")).unwrap(), "");
    assert!(out.join("checkpoint.bin").exists());
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = write_graph(tmp.path());
    let out = tmp.path().join("run");
    assert_eq!(
        hale(&[
            "train",
            "--data",
            s(&raw),
            "--out",
            s(&out),
            "--learnig-rate",
            "0.1"
        ]),
        2
    );
    assert_eq!(
        hale(&[
            "train",
            "--data",
            s(&raw),
            "--out",
            s(&out),
            "--batch-size",
            "0"
        ]),
        2
    );
    fs::remove_file(raw.join("valid.txt")).unwrap();
    assert_eq!(hale(&["train", "--data", s(&raw), "--out", s(&out)]), 2);
    let missing = tmp.path().join("nope.bin");
    assert_eq!(
        hale(&["export", "--checkpoint", s(&missing), "--out", s(&out)]),
        2
    );
    assert_eq!(
        hale(&[
            "benchmark",
            "--data",
            s(&raw),
            "--out",
            s(&out),
            "--variants",
            "hale"
        ]),
        2
    );
    assert_eq!(hale(&["frobnicate"]), 2);
}

#[test]
fn benchmark_writes_curves_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = write_graph(tmp.path());
    let out = tmp.path().join("bench");
    let mut args = vec![
        "benchmark",
        "--data",
        s(&raw),
        "--out",
        s(&out),
        "--variants",
        "hale,samneg,nonneg",
    ];
    args.extend(QUICK);
    assert_eq!(hale(&args), 0);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4, "{summary}");
    for v in ["hale", "samneg", "nonneg"] {
        assert!(
            summary
                .lines()
                .any(|l| l.starts_with(v) && l.contains(",ok,")),
            "{summary}"
        );
    }
    let curves = fs::read_to_string(out.join("curves.csv")).unwrap();
    assert!(curves.lines().count() > 3);
}
