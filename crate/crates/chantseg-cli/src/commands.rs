//! The ingest, train, segment, classify, and analyze subcommands.

use crate::manifest::Manifest;
use crate::opts::{CommonArgs, MethodArg};
use crate::pipeline::{
    self, encode_tones, ensure_out_dir, load_corpus, seed_streams,
};
use crate::user_error;
use anyhow::{Context, Result};
use chantseg::analysis::{
    modal_uniqueness, positional_segment_length, PositionalCurve,
    UniquenessMetric, DEFAULT_BINS,
};
use chantseg::baselines::{self, UnitKind};
use chantseg::corpus::{self, Chant, Encoding, SplitSpec};
use chantseg::features::micro_f1;
use chantseg::nhpylm::Segmentation;
use chantseg::storage;
use chantseg::tone::{ToneAlphabet, ToneId};
use chantseg::trainer;
use std::path::PathBuf;

fn model_path(args: &CommonArgs) -> Result<&PathBuf> {
    args.model
        .as_ref()
        .ok_or_else(|| user_error("--model is required"))
}

fn start_manifest(name: &str, args: &CommonArgs) -> Result<Manifest> {
    let mut manifest = Manifest::new(name, args.settings());
    if let Some(config) = &args.config {
        manifest.add_input("config", config)?;
    }
    if let Some(corpus) = &args.corpus {
        if corpus.is_file() {
            manifest.add_input("corpus", corpus)?;
        }
    }
    Ok(manifest)
}

// --- ingest --------------------------------------------------------------

pub fn ingest(args: &CommonArgs) -> Result<()> {
    let out = ensure_out_dir(args)?;
    let mut manifest = start_manifest("ingest", args)?;
    let loaded = load_corpus(args)?;

    let base_seed = args.seeds[0];
    let streams = seed_streams(base_seed);
    let mut spec = SplitSpec::new(streams.split);
    spec.grouping = args.grouping();
    let split = corpus::split_corpus(&loaded.chants, &spec)?;

    for (name, part) in [
        ("train.jsonl", &split.train),
        ("validation.jsonl", &split.validation),
        ("test.jsonl", &split.test),
    ] {
        let path = out.join(name);
        let mut file = std::io::BufWriter::new(
            std::fs::File::create(&path)
                .with_context(|| format!("writing {}", path.display()))?,
        );
        corpus::write_chants_jsonl(&mut file, part)?;
        manifest.add_output(name, &path)?;
    }
    if let Some(report) = &loaded.filter_report {
        let path = out.join("filter_report.json");
        std::fs::write(&path, serde_json::to_string_pretty(report)? + "\n")?;
        manifest.add_output("filter_report.json", &path)?;
    }
    manifest.write(&out)?;

    if let Some(report) = &loaded.filter_report {
        println!(
            "read {} records; kept {} ({} wrong genre, {} wrong source, {} bad mode, {} incomplete, {} without melody)",
            report.total,
            report.kept,
            report.wrong_genre,
            report.wrong_source,
            report.bad_mode,
            report.incomplete,
            report.no_melody
        );
    }
    if loaded.dropped_by_encoding > 0 {
        println!(
            "dropped {} one-tone chants during interval encoding",
            loaded.dropped_by_encoding
        );
    }
    println!(
        "split with seed {base_seed}: {} train / {} validation / {} test -> {}",
        split.train.len(),
        split.validation.len(),
        split.test.len(),
        out.display()
    );
    Ok(())
}

// --- train ---------------------------------------------------------------

/// Training data plus the chant pool whose gamut fixes the alphabet.
struct TrainData {
    train: Vec<Chant>,
    validation: Vec<Chant>,
    alphabet_pool: Vec<Chant>,
}

fn load_train_data(args: &CommonArgs) -> Result<TrainData> {
    let path = args
        .corpus
        .as_ref()
        .ok_or_else(|| user_error("--corpus is required"))?;
    if path.is_dir() {
        let encoding = Encoding::from(args.encoding);
        let train_path = path.join("train.jsonl");
        if !train_path.is_file() {
            return Err(user_error(format!(
                "{} has no train.jsonl (expected an ingest output directory)",
                path.display()
            )));
        }
        let (train, _) = pipeline::load_jsonl(&train_path, encoding)?;
        if train.is_empty() {
            return Err(user_error(format!("{} is empty", train_path.display())));
        }
        let validation = match path.join("validation.jsonl") {
            p if p.is_file() => pipeline::load_jsonl(&p, encoding)?.0,
            _ => Vec::new(),
        };
        // The alphabet must also cover chants segmented later, so pull
        // in the test partition when it sits alongside.
        let mut pool: Vec<Chant> = train.iter().chain(&validation).cloned().collect();
        let test_path = path.join("test.jsonl");
        if test_path.is_file() {
            pool.extend(pipeline::load_jsonl(&test_path, encoding)?.0);
        }
        Ok(TrainData {
            train,
            validation,
            alphabet_pool: pool,
        })
    } else {
        let loaded = load_corpus(args)?;
        let streams = seed_streams(args.seeds[0]);
        let mut spec = SplitSpec::new(streams.split);
        spec.grouping = args.grouping();
        let split = corpus::split_corpus(&loaded.chants, &spec)?;
        Ok(TrainData {
            train: split.train,
            validation: split.validation,
            alphabet_pool: loaded.chants,
        })
    }
}

pub fn train(args: &CommonArgs) -> Result<()> {
    let out = ensure_out_dir(args)?;
    let mut manifest = start_manifest("train", args)?;
    let data = load_train_data(args)?;
    let template = pipeline::template_model(&data.alphabet_pool)?;
    let alphabet = template.alphabet().clone();
    let train_tones = encode_tones(&alphabet, &data.train)?;
    let val_tones = encode_tones(&alphabet, &data.validation)?;
    let streams = seed_streams(args.seeds[0]);

    match args.method {
        MethodArg::Nhpylm => {
            let outcome =
                pipeline::train_single(&train_tones, &val_tones, template, args, &streams)?;
            if !outcome.converged {
                eprintln!(
                    "warning: stopped at max_sweeps = {}; validation was still improving",
                    args.max_sweeps
                );
            }
            let model_file = out.join("model.bin");
            storage::save_model(&model_file, &outcome.model)?;
            manifest.add_output("model.bin", &model_file)?;
            let history_file = out.join("history.csv");
            pipeline::write_history_csv(&history_file, &outcome.history)?;
            manifest.add_output("history.csv", &history_file)?;
            manifest.write(&out)?;
            println!(
                "trained on {} chants ({} validation): best validation perplexity {:.4} at sweep {} of {}",
                data.train.len(),
                data.validation.len(),
                outcome.best_validation,
                outcome.best_sweep,
                outcome.history.len()
            );
        }
        MethodArg::NhpylmClasses => {
            let train_labeled = pipeline::labeled(&data.train, &train_tones);
            let val_labeled = pipeline::labeled(&data.validation, &val_tones);
            let outcome =
                pipeline::train_modes(&train_labeled, &val_labeled, &template, args, &streams)?;
            let ensemble_file = out.join("ensemble.bin");
            storage::save_ensemble(&ensemble_file, &outcome.ensemble)?;
            manifest.add_output("ensemble.bin", &ensemble_file)?;
            for (i, history) in outcome.histories.iter().enumerate() {
                if history.is_empty() {
                    continue;
                }
                let name = format!("history_mode_{}.csv", i + 1);
                let path = out.join(&name);
                pipeline::write_history_csv(&path, history)?;
                manifest.add_output(&name, &path)?;
            }
            manifest.write(&out)?;
            for (i, history) in outcome.histories.iter().enumerate() {
                let mode = i + 1;
                let count = train_labeled
                    .iter()
                    .filter(|c| c.mode as usize == mode)
                    .count();
                match history
                    .iter()
                    .map(|r| r.validation_perplexity)
                    .fold(f64::INFINITY, f64::min)
                {
                    best if best.is_finite() => println!(
                        "mode {mode}: {count} chants, best validation perplexity {best:.4}"
                    ),
                    _ => println!("mode {mode}: no training data"),
                }
            }
            if !outcome.empty_modes.is_empty() {
                eprintln!(
                    "warning: no training chants for modes {:?}; their models stay untrained",
                    outcome.empty_modes
                );
            }
        }
        other => {
            return Err(user_error(format!(
                "method {other} has no trainable model; use nhpylm or nhpylm-classes"
            )));
        }
    }
    Ok(())
}

// --- segmentation builders (segment, analyze) -----------------------------

/// Which model a per-mode ensemble uses for each chant.
#[derive(Clone, Copy, PartialEq)]
enum ModeSource {
    /// The mode the ensemble itself predicts (unlabeled use).
    Predicted,
    /// The chant's annotated mode (descriptive analysis).
    Gold,
}

fn build_segmentations(
    args: &CommonArgs,
    chants: &[Chant],
    mode_source: ModeSource,
    manifest: &mut Manifest,
) -> Result<(ToneAlphabet, Vec<Vec<ToneId>>, Vec<Segmentation>)> {
    match args.method {
        MethodArg::Nhpylm => {
            let path = model_path(args)?;
            manifest.add_input("model", path)?;
            let model = storage::load_model(path)?;
            let alphabet = model.alphabet().clone();
            let tones = encode_tones(&alphabet, chants)?;
            let segs = trainer::viterbi_corpus(&model, &tones);
            Ok((alphabet, tones, segs))
        }
        MethodArg::NhpylmClasses => {
            let path = model_path(args)?;
            manifest.add_input("model", path)?;
            let ensemble = storage::load_ensemble(path)?;
            let alphabet = ensemble.models()[0].alphabet().clone();
            let tones = encode_tones(&alphabet, chants)?;
            let segs = match mode_source {
                ModeSource::Predicted => tones
                    .iter()
                    .map(|t| Ok(ensemble.segment_with_ensemble(t)?))
                    .collect::<Result<Vec<_>>>()?,
                ModeSource::Gold => chants
                    .iter()
                    .zip(&tones)
                    .map(|(c, t)| {
                        let model = &ensemble.models()[(c.mode - 1) as usize];
                        trainer::viterbi_segment(model, t)
                    })
                    .collect(),
            };
            Ok((alphabet, tones, segs))
        }
        MethodArg::Ngram4 => {
            let alphabet = corpus::build_alphabet(chants)?;
            let tones = encode_tones(&alphabet, chants)?;
            let segs = tones
                .iter()
                .map(|t| Ok(baselines::ngram_segment(t.len(), 4)?))
                .collect::<Result<Vec<_>>>()?;
            Ok((alphabet, tones, segs))
        }
        MethodArg::Syllables | MethodArg::Words => {
            let unit = if args.method == MethodArg::Syllables {
                UnitKind::Syllable
            } else {
                UnitKind::Word
            };
            let alphabet = corpus::build_alphabet(chants)?;
            let tones = encode_tones(&alphabet, chants)?;
            let segs = chants
                .iter()
                .map(|c| Ok(baselines::unit_segment(c, unit)?))
                .collect::<Result<Vec<_>>>()?;
            Ok((alphabet, tones, segs))
        }
        other => Err(user_error(format!(
            "method {other} does not produce segmentations"
        ))),
    }
}

// --- segment ---------------------------------------------------------------

pub fn segment(args: &CommonArgs) -> Result<()> {
    let out = ensure_out_dir(args)?;
    let mut manifest = start_manifest("segment", args)?;
    let loaded = load_corpus(args)?;
    let (alphabet, tones, segs) =
        build_segmentations(args, &loaded.chants, ModeSource::Predicted, &mut manifest)?;

    let path = out.join("segmentations.jsonl");
    pipeline::write_segmentations(&path, &alphabet, &loaded.chants, &tones, &segs)?;
    manifest.add_output("segmentations.jsonl", &path)?;
    manifest.write(&out)?;

    let total_segments: usize = segs.iter().map(|s| s.lengths.len()).sum();
    let total_tones: usize = tones.iter().map(Vec::len).sum();
    println!(
        "segmented {} chants with method {}: {} segments over {} tones (mean length {:.3})",
        loaded.chants.len(),
        args.method,
        total_segments,
        total_tones,
        total_tones as f64 / total_segments as f64
    );
    Ok(())
}

// --- classify ----------------------------------------------------------------

pub fn classify(args: &CommonArgs) -> Result<()> {
    if args.method != MethodArg::NhpylmClasses {
        return Err(user_error(
            "classify drives a trained per-mode ensemble; pass --method nhpylm-classes",
        ));
    }
    let out = ensure_out_dir(args)?;
    let mut manifest = start_manifest("classify", args)?;
    let path = model_path(args)?;
    manifest.add_input("model", path)?;
    let ensemble = storage::load_ensemble(path)?;
    let loaded = load_corpus(args)?;
    let alphabet = ensemble.models()[0].alphabet().clone();
    let tones = encode_tones(&alphabet, &loaded.chants)?;

    let mut rows = Vec::with_capacity(loaded.chants.len());
    let mut impossible = 0usize;
    for (chant, t) in loaded.chants.iter().zip(&tones) {
        let result = ensemble.classify_mode(t)?;
        if result.all_impossible {
            impossible += 1;
        }
        rows.push((chant.record_id.clone(), chant.mode, result));
    }

    let csv_path = out.join("predictions.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    let mut header = vec![
        "record_id".to_string(),
        "gold_mode".to_string(),
        "predicted_mode".to_string(),
    ];
    header.extend((1..=8).map(|m| format!("score_{m}")));
    w.write_record(&header)?;
    for (record_id, gold, result) in &rows {
        let mut row = vec![
            record_id.clone(),
            gold.to_string(),
            result.mode.to_string(),
        ];
        row.extend(result.scores.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    drop(w);
    manifest.add_output("predictions.csv", &csv_path)?;
    manifest.write(&out)?;

    let predicted: Vec<u8> = rows.iter().map(|(_, _, r)| r.mode).collect();
    let gold: Vec<u8> = rows.iter().map(|(_, g, _)| *g).collect();
    let score = micro_f1(&predicted, &gold)?;
    println!(
        "classified {} chants: micro-F1 {:.4} against the corpus annotations",
        rows.len(),
        score
    );
    if impossible > 0 {
        eprintln!(
            "warning: {impossible} chants scored -inf under every mode; their prediction fell back to the prior"
        );
    }
    Ok(())
}

// --- analyze ---------------------------------------------------------------

fn curve_summary(curve: &PositionalCurve) -> String {
    let bins = curve.bins();
    let means: Vec<f64> = (0..bins).filter_map(|b| curve.mean(b)).collect();
    if means.is_empty() {
        return "no samples".to_string();
    }
    let lo = means.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    format!(
        "{} samples across {} bins, bin means in [{:.4}, {:.4}]",
        curve.total_count(),
        bins,
        lo,
        hi
    )
}

pub fn analyze(args: &CommonArgs) -> Result<()> {
    let out = ensure_out_dir(args)?;
    let mut manifest = start_manifest("analyze", args)?;
    let loaded = load_corpus(args)?;
    let (_, tones, segs) =
        build_segmentations(args, &loaded.chants, ModeSource::Gold, &mut manifest)?;
    let modes: Vec<u8> = loaded.chants.iter().map(|c| c.mode).collect();

    let length_curve = positional_segment_length(&segs, DEFAULT_BINS)?;
    let uniqueness_curve = modal_uniqueness(
        &tones,
        &modes,
        &segs,
        DEFAULT_BINS,
        UniquenessMetric::MaxShare,
    )?;

    let path = out.join("curves.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["curve", "bin_center", "mean", "count"])?;
    for (name, curve) in [
        ("segment_length", &length_curve),
        ("modal_uniqueness", &uniqueness_curve),
    ] {
        for b in 0..curve.bins() {
            w.write_record([
                name.to_string(),
                curve.bin_center(b).to_string(),
                curve.mean(b).map(|m| m.to_string()).unwrap_or_default(),
                curve.count(b).to_string(),
            ])?;
        }
    }
    w.flush()?;
    drop(w);
    manifest.add_output("curves.csv", &path)?;
    manifest.write(&out)?;

    println!("segment length: {}", curve_summary(&length_curve));
    println!("modal uniqueness: {}", curve_summary(&uniqueness_curve));
    Ok(())
}
