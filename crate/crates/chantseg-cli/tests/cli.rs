//! End-to-end tests of the chantseg binary on a synthetic corpus.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_chantseg"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_success(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed\nstdout:\n{}\nstderr:\n{}",
        stdout(out),
        stderr(out)
    );
}

/// Deterministic synthetic corpus: eight modes, each with its own small
/// pitch vocabulary and finalis, melodies assembled from per-mode words.
fn write_fixture_csv(path: &Path, rows: usize) {
    const FINALS: [char; 8] = ['d', 'e', 'f', 'g', 'h', 'j', 'k', 'l'];
    const STEPS: [char; 19] = [
        '9', 'a', 'b', 'c', 'd', 'e', 'f', 'g', 'h', 'j', 'k', 'l', 'm', 'n', 'o',
        'p', 'q', 'r', 's',
    ];
    let up = |c: char, n: usize| {
        let i = STEPS.iter().position(|&s| s == c).unwrap();
        STEPS[i + n]
    };
    let mut csv = String::from("id,cantus_id,mode,genre_id,volpiano,source_id,complete\n");
    for i in 0..rows {
        let mode = (i % 8) + 1;
        let f = FINALS[mode - 1];
        // Four words over the mode's tetrachord; the first ends on the
        // finalis and always closes the melody.
        let pool = [
            format!("{}-{}--{}", up(f, 2), up(f, 1), f),
            format!("{}-{}-{}", f, up(f, 1), up(f, 2)),
            format!("{}--{}", up(f, 1), up(f, 3)),
            format!("{}-{}", up(f, 2), up(f, 2)),
        ];
        let n_words = 3 + i % 3;
        let mut words: Vec<&str> = (0..n_words)
            .map(|j| pool[(i + 3 * j) % 4].as_str())
            .collect();
        words.push(pool[0].as_str());
        let melody = format!("1---{}---4", words.join("---"));
        let source = if i % 2 == 0 { "SRC-A" } else { "SRC-B" };
        csv.push_str(&format!(
            "r{i:04},cid{:03},{mode},genre_a,{melody},{source},true\n",
            i % 40
        ));
    }
    std::fs::write(path, csv).unwrap();
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    corpus: PathBuf,
}

fn fixture(rows: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let corpus = root.join("corpus.csv");
    write_fixture_csv(&corpus, rows);
    Fixture {
        _dir: dir,
        root,
        corpus,
    }
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

#[test]
fn unknown_subcommand_exits_one_with_usage() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(
        err.to_lowercase().contains("usage"),
        "expected usage text, got:\n{err}"
    );
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
}

#[test]
fn missing_inputs_exit_one() {
    let fx = fixture(24);
    let out_dir = fx.root.join("out");
    // No corpus flag at all.
    let out = run(&["segment", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "stderr: {}", stderr(&out));
    // Corpus path that does not exist.
    let out = run(&[
        "evaluate",
        "--corpus",
        fx.root.join("nope.csv").to_str().unwrap(),
        "--method",
        "ngram4",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1), "stderr: {}", stderr(&out));
}

#[test]
fn corrupt_model_file_exits_one() {
    let fx = fixture(24);
    let bad = fx.root.join("bad.bin");
    std::fs::write(&bad, b"not a bundle at all").unwrap();
    let out = run(&[
        "segment",
        "--corpus",
        fx.corpus.to_str().unwrap(),
        "--model",
        bad.to_str().unwrap(),
        "--method",
        "nhpylm",
        "--out",
        fx.root.join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("not a model bundle"));
}

#[test]
fn ingest_writes_splits_report_and_manifest() {
    let fx = fixture(80);
    let out_dir = fx.root.join("ingested");
    let out = run(&[
        "ingest",
        "--corpus",
        fx.corpus.to_str().unwrap(),
        "--genre",
        "antiphon",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_success(&out, "ingest");

    let report: serde_json::Value =
        serde_json::from_str(&read(&out_dir.join("filter_report.json"))).unwrap();
    assert_eq!(report["total"], 80);
    let kept = report["kept"].as_u64().unwrap() as usize;
    assert_eq!(kept, 80);

    let mut lines = 0usize;
    for name in ["train.jsonl", "validation.jsonl", "test.jsonl"] {
        let text = read(&out_dir.join(name));
        assert!(!text.trim().is_empty(), "{name} should not be empty");
        lines += text.lines().count();
    }
    assert_eq!(lines, kept, "splits must cover the kept corpus exactly");

    let manifest: serde_json::Value =
        serde_json::from_str(&read(&out_dir.join("manifest.json"))).unwrap();
    assert_eq!(manifest["subcommand"], "ingest");
    assert_eq!(manifest["settings"]["genre"], "antiphon");
    assert!(manifest["inputs"]["corpus"]["sha256"].is_string());
    assert!(manifest["outputs"]["train.jsonl"]["sha256"].is_string());
}

#[test]
fn source_filter_drops_other_sources() {
    let fx = fixture(80);
    let out_dir = fx.root.join("ingested");
    let out = run(&[
        "ingest",
        "--corpus",
        fx.corpus.to_str().unwrap(),
        "--source",
        "SRC-A",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_success(&out, "ingest with source filter");
    let report: serde_json::Value =
        serde_json::from_str(&read(&out_dir.join("filter_report.json"))).unwrap();
    assert_eq!(report["kept"], 40);
    assert_eq!(report["wrong_source"], 40);
}

#[test]
fn evaluate_ngram4_is_deterministic() {
    let fx = fixture(120);
    let mut outputs = Vec::new();
    for name in ["run1", "run2"] {
        let out_dir = fx.root.join(name);
        let out = run(&[
            "evaluate",
            "--corpus",
            fx.corpus.to_str().unwrap(),
            "--method",
            "ngram4",
            "--seeds",
            "3,4,5",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_success(&out, "evaluate ngram4");
        outputs.push((
            read(&out_dir.join("metrics.csv")),
            read(&out_dir.join("predictions.csv")),
        ));
    }
    assert_eq!(outputs[0].0, outputs[1].0, "metrics.csv must be identical");
    assert_eq!(outputs[0].1, outputs[1].1, "predictions.csv must be identical");

    let metrics = &outputs[0].0;
    let lines: Vec<&str> = metrics.lines().collect();
    // Header, three seed rows, mean, std.
    assert_eq!(lines.len(), 6, "metrics:\n{metrics}");
    assert!(lines[4].starts_with("mean,ngram4,antiphon,pitch,"));
    assert!(lines[5].starts_with("std,ngram4,antiphon,pitch,"));
    let f1: f64 = lines[1].split(',').nth(7).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&f1), "micro-F1 {f1} out of range");
}

#[test]
fn evaluate_classical_and_overlap_baselines_run() {
    let fx = fixture(96);
    for method in ["classical", "overlap17", "syllables", "words"] {
        let out_dir = fx.root.join(method);
        let out = run(&[
            "evaluate",
            "--corpus",
            fx.corpus.to_str().unwrap(),
            "--method",
            method,
            "--seeds",
            "0,1",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_success(&out, method);
        let metrics = read(&out_dir.join("metrics.csv"));
        assert_eq!(metrics.lines().count(), 5, "{method} metrics:\n{metrics}");
    }
}

#[test]
fn evaluate_nhpylm_reports_perplexity() {
    let fx = fixture(96);
    let out_dir = fx.root.join("nhpylm");
    let out = run(&[
        "evaluate",
        "--corpus",
        fx.corpus.to_str().unwrap(),
        "--method",
        "nhpylm",
        "--seeds",
        "0",
        "--max-sweeps",
        "2",
        "--patience",
        "1",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_success(&out, "evaluate nhpylm");
    let metrics = read(&out_dir.join("metrics.csv"));
    let seed_row: Vec<&str> = metrics.lines().nth(1).unwrap().split(',').collect();
    let ppl: f64 = seed_row[8].parse().expect("perplexity present");
    assert!(ppl > 1.0, "test perplexity {ppl} should exceed 1");
}

#[test]
fn config_file_overrides_flags() {
    let fx = fixture(96);
    let config = fx.root.join("run.conf");
    std::fs::write(&config, "method = ngram4\nseeds = 5\n# comment\n").unwrap();
    let out_dir = fx.root.join("out");
    let out = run(&[
        "evaluate",
        "--corpus",
        fx.corpus.to_str().unwrap(),
        "--method",
        "classical",
        "--seeds",
        "0,1,2",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_success(&out, "evaluate with config file");
    let metrics = read(&out_dir.join("metrics.csv"));
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 4, "one seed plus aggregates:\n{metrics}");
    assert!(lines[1].starts_with("5,ngram4,"), "config must win: {}", lines[1]);

    let bad = fx.root.join("bad.conf");
    std::fs::write(&bad, "no_such_key = 1\n").unwrap();
    let out = run(&[
        "evaluate",
        "--corpus",
        fx.corpus.to_str().unwrap(),
        "--config",
        bad.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("unknown config key"));
}

#[test]
fn train_segment_analyze_roundtrip_single_model() {
    let fx = fixture(96);
    let ingest_dir = fx.root.join("ingested");
    let out = run(&[
        "ingest",
        "--corpus",
        fx.corpus.to_str().unwrap(),
        "--out",
        ingest_dir.to_str().unwrap(),
    ]);
    assert_success(&out, "ingest");

    // Train from the ingest directory.
    let train_dir = fx.root.join("trained");
    let out = run(&[
        "train",
        "--corpus",
        ingest_dir.to_str().unwrap(),
        "--method",
        "nhpylm",
        "--max-sweeps",
        "3",
        "--patience",
        "2",
        "--seeds",
        "11",
        "--out",
        train_dir.to_str().unwrap(),
    ]);
    assert_success(&out, "train nhpylm");
    let model = train_dir.join("model.bin");
    assert!(model.is_file());
    let history = read(&train_dir.join("history.csv"));
    assert!(history.lines().count() >= 2, "history:\n{history}");
    assert!(history.starts_with("sweep,train_perplexity,validation_perplexity,lambda,"));

    // Segment the held-out partition.
    let seg_dir = fx.root.join("segmented");
    let out = run(&[
        "segment",
        "--corpus",
        ingest_dir.join("test.jsonl").to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--method",
        "nhpylm",
        "--out",
        seg_dir.to_str().unwrap(),
    ]);
    assert_success(&out, "segment");
    let segmentations = read(&seg_dir.join("segmentations.jsonl"));
    let test_lines = read(&ingest_dir.join("test.jsonl")).lines().count();
    assert_eq!(segmentations.lines().count(), test_lines);
    for line in segmentations.lines() {
        let row: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(row["record_id"].is_string());
        let segments = row["segments"].as_array().unwrap();
        assert!(!segments.is_empty());
        for segment in segments {
            let tones = segment.as_array().unwrap();
            assert!((1..=7).contains(&tones.len()), "segment length cap");
        }
    }

    // Positional curves from the same model.
    let analyze_dir = fx.root.join("analyzed");
    let out = run(&[
        "analyze",
        "--corpus",
        fx.corpus.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--method",
        "nhpylm",
        "--out",
        analyze_dir.to_str().unwrap(),
    ]);
    assert_success(&out, "analyze");
    let curves = read(&analyze_dir.join("curves.csv"));
    assert_eq!(curves.lines().count(), 1 + 2 * 50, "curves:\n{curves}");
    assert!(curves.starts_with("curve,bin_center,mean,count"));
    assert!(curves.contains("segment_length"));
    assert!(curves.contains("modal_uniqueness"));
}

#[test]
fn train_and_classify_roundtrip_mode_ensemble() {
    let fx = fixture(96);
    let train_dir = fx.root.join("trained");
    let out = run(&[
        "train",
        "--corpus",
        fx.corpus.to_str().unwrap(),
        "--method",
        "nhpylm-classes",
        "--max-sweeps",
        "2",
        "--patience",
        "1",
        "--seeds",
        "7",
        "--out",
        train_dir.to_str().unwrap(),
    ]);
    assert_success(&out, "train nhpylm-classes");
    let ensemble = train_dir.join("ensemble.bin");
    assert!(ensemble.is_file());
    assert!(train_dir.join("history_mode_1.csv").is_file());

    let classify_dir = fx.root.join("classified");
    let out = run(&[
        "classify",
        "--corpus",
        fx.corpus.to_str().unwrap(),
        "--model",
        ensemble.to_str().unwrap(),
        "--method",
        "nhpylm-classes",
        "--out",
        classify_dir.to_str().unwrap(),
    ]);
    assert_success(&out, "classify");
    let predictions = read(&classify_dir.join("predictions.csv"));
    let mut lines = predictions.lines();
    let header = lines.next().unwrap();
    assert_eq!(
        header,
        "record_id,gold_mode,predicted_mode,score_1,score_2,score_3,score_4,score_5,score_6,score_7,score_8"
    );
    assert_eq!(lines.count(), 96);
    assert!(stdout(&out).contains("micro-F1"));

    // Classify refuses to run without the ensemble method.
    let out = run(&[
        "classify",
        "--corpus",
        fx.corpus.to_str().unwrap(),
        "--model",
        ensemble.to_str().unwrap(),
        "--method",
        "ngram4",
        "--out",
        classify_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn training_baseline_methods_is_rejected() {
    let fx = fixture(24);
    let out = run(&[
        "train",
        "--corpus",
        fx.corpus.to_str().unwrap(),
        "--method",
        "classical",
        "--out",
        fx.root.join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("no trainable model"));
}
