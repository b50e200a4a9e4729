//! The evaluate subcommand: the full train/test protocol, repeated over
//! a seed list, with per-seed and aggregated metrics.

use crate::manifest::Manifest;
use crate::opts::{CommonArgs, MethodArg};
use crate::pipeline::{
    self, encode_tones, ensure_out_dir, load_corpus, seed_streams, SeedStreams,
};
use anyhow::Result;
use chantseg::baselines::{classical_features, CLASSICAL_DIM};
use chantseg::corpus::{self, Chant, Encoding, Split, SplitSpec};
use chantseg::features::{
    build_vocabulary, micro_f1, train_classifier, FeatureVector, LinearClassifier,
};
use chantseg::nhpylm::NhpylmModel;
use chantseg::tone::ToneAlphabet;
use chantseg::trainer;
use std::path::Path;

/// One test chant's outcome: gold mode, predicted mode, and per-mode
/// scores where the method defines them.
struct Prediction {
    record_id: String,
    gold: u8,
    predicted: u8,
    scores: [Option<f64>; 8],
}

/// One seed's summary metrics.
struct SeedMetrics {
    seed: u64,
    n_train: usize,
    n_validation: usize,
    n_test: usize,
    micro_f1: f64,
    test_perplexity: Option<f64>,
}

pub fn evaluate(args: &CommonArgs) -> Result<()> {
    let out = ensure_out_dir(args)?;
    let mut manifest = Manifest::new("evaluate", args.settings());
    if let Some(config) = &args.config {
        manifest.add_input("config", config)?;
    }
    if let Some(corpus_path) = &args.corpus {
        if corpus_path.is_file() {
            manifest.add_input("corpus", corpus_path)?;
        }
    }
    let loaded = load_corpus(args)?;
    // One closed alphabet over the whole filtered corpus keeps encodings
    // comparable across seeds and splits.
    let alphabet = corpus::build_alphabet(&loaded.chants)?;

    let mut all_metrics = Vec::new();
    let mut all_predictions: Vec<(u64, Vec<Prediction>)> = Vec::new();
    for &seed in &args.seeds {
        let streams = seed_streams(seed);
        let mut spec = SplitSpec::new(streams.split);
        spec.grouping = args.grouping();
        let split = corpus::split_corpus(&loaded.chants, &spec)?;
        let (metrics, predictions) =
            evaluate_seed(args, &alphabet, &split, seed, &streams)?;
        match metrics.test_perplexity {
            Some(ppl) => println!(
                "seed {seed}: micro-F1 {:.4}, test perplexity {:.4} ({} test chants)",
                metrics.micro_f1, ppl, metrics.n_test
            ),
            None => println!(
                "seed {seed}: micro-F1 {:.4} ({} test chants)",
                metrics.micro_f1, metrics.n_test
            ),
        }
        all_metrics.push(metrics);
        all_predictions.push((seed, predictions));
    }

    let metrics_path = out.join("metrics.csv");
    write_metrics(&metrics_path, args, &all_metrics)?;
    manifest.add_output("metrics.csv", &metrics_path)?;
    let predictions_path = out.join("predictions.csv");
    write_predictions(&predictions_path, &all_predictions)?;
    manifest.add_output("predictions.csv", &predictions_path)?;
    manifest.write(&out)?;

    let f1s: Vec<f64> = all_metrics.iter().map(|m| m.micro_f1).collect();
    let (mean, std) = mean_std(&f1s);
    println!(
        "method {} over {} seeds: mean micro-F1 {:.4} (std {:.4})",
        args.method,
        args.seeds.len(),
        mean,
        std
    );
    let ppls: Vec<f64> = all_metrics
        .iter()
        .filter_map(|m| m.test_perplexity)
        .collect();
    if ppls.len() == all_metrics.len() {
        let (mean, std) = mean_std(&ppls);
        println!("mean test perplexity {mean:.4} (std {std:.4})");
    }
    Ok(())
}

fn evaluate_seed(
    args: &CommonArgs,
    alphabet: &ToneAlphabet,
    split: &Split,
    seed: u64,
    streams: &SeedStreams,
) -> Result<(SeedMetrics, Vec<Prediction>)> {
    let train_tones = encode_tones(alphabet, &split.train)?;
    let val_tones = encode_tones(alphabet, &split.validation)?;
    let test_tones = encode_tones(alphabet, &split.test)?;

    let (predictions, test_perplexity) = match args.method {
        MethodArg::NhpylmClasses => {
            let template =
                NhpylmModel::new(alphabet.clone(), chantseg::nhpylm::NhpylmConfig::default());
            let train_labeled = pipeline::labeled(&split.train, &train_tones);
            let val_labeled = pipeline::labeled(&split.validation, &val_tones);
            let outcome =
                pipeline::train_modes(&train_labeled, &val_labeled, &template, args, streams)?;
            let ensemble = outcome.ensemble;

            let mut predictions = Vec::with_capacity(split.test.len());
            for (chant, tones) in split.test.iter().zip(&test_tones) {
                let result = ensemble.classify_mode(tones)?;
                let mut scores = [None; 8];
                for (slot, score) in scores.iter_mut().zip(&result.scores) {
                    *slot = Some(*score);
                }
                predictions.push(Prediction {
                    record_id: chant.record_id.clone(),
                    gold: chant.mode,
                    predicted: result.mode,
                    scores,
                });
            }
            // Test perplexity under each chant's annotated mode, so the
            // language-model comparison conditions on class information.
            let mut total_ln = 0.0;
            let mut events = 0u64;
            for (chant, tones) in split.test.iter().zip(&test_tones) {
                let model = &ensemble.models()[(chant.mode - 1) as usize];
                let seg = trainer::viterbi_segment(model, tones);
                total_ln += model.segmentation_log_prob(tones, &seg)?;
                events += seg.lengths.len() as u64 + 1;
            }
            let ppl = trainer::perplexity_from_nats(total_ln, events);
            (predictions, Some(ppl))
        }
        MethodArg::Classical => {
            let vectors = |chants: &[Chant]| -> Result<Vec<FeatureVector>> {
                chants
                    .iter()
                    .map(|c| Ok(classical_features(c)?))
                    .collect()
            };
            let train_vectors = vectors(&split.train)?;
            let test_vectors = vectors(&split.test)?;
            let labels: Vec<u8> = split.train.iter().map(|c| c.mode).collect();
            let classifier = train_classifier(
                &train_vectors,
                &labels,
                CLASSICAL_DIM,
                1.0,
                streams.classifier,
            )?;
            let predictions =
                svm_predictions(&classifier, &split.test, &test_vectors);
            (predictions, None)
        }
        method => {
            // The remaining methods share one shape: build segment
            // documents, then TF-IDF features, then a linear classifier.
            let mut test_perplexity = None;
            let (train_docs, test_docs) = if method == MethodArg::Nhpylm {
                let template = NhpylmModel::new(
                    alphabet.clone(),
                    chantseg::nhpylm::NhpylmConfig::default(),
                );
                let outcome = pipeline::train_single(
                    &train_tones,
                    &val_tones,
                    template,
                    args,
                    streams,
                )?;
                let model = outcome.model;
                test_perplexity = Some(trainer::heldout_perplexity(&model, &test_tones)?);
                let train_segs = trainer::viterbi_corpus(&model, &train_tones);
                let test_segs = trainer::viterbi_corpus(&model, &test_tones);
                (
                    pipeline::feature_docs(method, &split.train, &train_tones, Some(&train_segs))?,
                    pipeline::feature_docs(method, &split.test, &test_tones, Some(&test_segs))?,
                )
            } else {
                (
                    pipeline::feature_docs(method, &split.train, &train_tones, None)?,
                    pipeline::feature_docs(method, &split.test, &test_tones, None)?,
                )
            };
            let vocabulary = build_vocabulary(&train_docs)?;
            let train_vectors: Vec<FeatureVector> =
                train_docs.iter().map(|d| vocabulary.vectorize(d)).collect();
            let test_vectors: Vec<FeatureVector> =
                test_docs.iter().map(|d| vocabulary.vectorize(d)).collect();
            let labels: Vec<u8> = split.train.iter().map(|c| c.mode).collect();
            let classifier = train_classifier(
                &train_vectors,
                &labels,
                vocabulary.len(),
                1.0,
                streams.classifier,
            )?;
            let predictions =
                svm_predictions(&classifier, &split.test, &test_vectors);
            (predictions, test_perplexity)
        }
    };

    let predicted: Vec<u8> = predictions.iter().map(|p| p.predicted).collect();
    let gold: Vec<u8> = predictions.iter().map(|p| p.gold).collect();
    let score = micro_f1(&predicted, &gold)?;
    Ok((
        SeedMetrics {
            seed,
            n_train: split.train.len(),
            n_validation: split.validation.len(),
            n_test: split.test.len(),
            micro_f1: score,
            test_perplexity,
        },
        predictions,
    ))
}

fn svm_predictions(
    classifier: &LinearClassifier,
    test: &[Chant],
    vectors: &[FeatureVector],
) -> Vec<Prediction> {
    test.iter()
        .zip(vectors)
        .map(|(chant, v)| {
            let decision = classifier.decision_scores(v);
            let mut scores = [None; 8];
            for (class, score) in classifier.classes().iter().zip(&decision) {
                if (1..=8).contains(class) {
                    scores[(*class - 1) as usize] = Some(*score);
                }
            }
            Prediction {
                record_id: chant.record_id.clone(),
                gold: chant.mode,
                predicted: classifier.predict(v),
                scores,
            }
        })
        .collect()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn write_metrics(path: &Path, args: &CommonArgs, metrics: &[SeedMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "seed",
        "method",
        "genre",
        "encoding",
        "n_train",
        "n_validation",
        "n_test",
        "micro_f1",
        "test_perplexity",
    ])?;
    let genre = match args.genre {
        crate::opts::GenreArg::Antiphon => "antiphon",
        crate::opts::GenreArg::Responsory => "responsory",
    };
    let encoding = Encoding::from(args.encoding).to_string();
    for m in metrics {
        w.write_record([
            m.seed.to_string(),
            args.method.as_str().to_string(),
            genre.to_string(),
            encoding.clone(),
            m.n_train.to_string(),
            m.n_validation.to_string(),
            m.n_test.to_string(),
            m.micro_f1.to_string(),
            m.test_perplexity.map(|p| p.to_string()).unwrap_or_default(),
        ])?;
    }
    let f1s: Vec<f64> = metrics.iter().map(|m| m.micro_f1).collect();
    let ppls: Vec<f64> = metrics.iter().filter_map(|m| m.test_perplexity).collect();
    let all_ppl = ppls.len() == metrics.len() && !ppls.is_empty();
    let (f1_mean, f1_std) = mean_std(&f1s);
    let (ppl_mean, ppl_std) = mean_std(&ppls);
    for (tag, f1, ppl) in [
        ("mean", f1_mean, ppl_mean),
        ("std", f1_std, ppl_std),
    ] {
        w.write_record([
            tag.to_string(),
            args.method.as_str().to_string(),
            genre.to_string(),
            encoding.clone(),
            String::new(),
            String::new(),
            String::new(),
            f1.to_string(),
            if all_ppl { ppl.to_string() } else { String::new() },
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_predictions(path: &Path, all: &[(u64, Vec<Prediction>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![
        "seed".to_string(),
        "record_id".to_string(),
        "gold_mode".to_string(),
        "predicted_mode".to_string(),
    ];
    header.extend((1..=8).map(|m| format!("score_{m}")));
    w.write_record(&header)?;
    for (seed, predictions) in all {
        for p in predictions {
            let mut row = vec![
                seed.to_string(),
                p.record_id.clone(),
                p.gold.to_string(),
                p.predicted.to_string(),
            ];
            row.extend(
                p.scores
                    .iter()
                    .map(|s| s.map(|v| v.to_string()).unwrap_or_default()),
            );
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
