//! Stages shared by several subcommands: corpus loading, tone encoding,
//! seed-stream derivation, model training, and output writers.

use crate::opts::{CommonArgs, MethodArg};
use crate::user_error;
use anyhow::{Context, Result};
use chantseg::baselines::{self, UnitKind};
use chantseg::corpus::{
    self, Chant, CsvColumns, Encoding, FilterReport, FilterRules,
};
use chantseg::ensemble::{
    train_ensemble, EnsembleConfig, EnsembleOutcome, LabeledChant,
};
use chantseg::features::{ngram_bag, segment_key};
use chantseg::nhpylm::{NhpylmConfig, NhpylmModel, Segmentation};
use chantseg::seeds::stream_seed;
use chantseg::tone::{ToneAlphabet, ToneId};
use chantseg::trainer::{self, SweepRecord, TrainConfig, TrainOutcome};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::io::Write;
use std::path::Path;

/// Named rng streams derived from one base seed, so each pipeline stage
/// is independently reproducible.
#[derive(Debug, Clone, Copy)]
pub struct SeedStreams {
    pub split: u64,
    pub init: u64,
    pub gibbs: u64,
    pub classifier: u64,
}

pub fn seed_streams(base: u64) -> SeedStreams {
    SeedStreams {
        split: stream_seed(base, "split"),
        init: stream_seed(base, "init"),
        gibbs: stream_seed(base, "gibbs"),
        classifier: stream_seed(base, "classifier"),
    }
}

/// A corpus ready for modeling, with provenance counters.
pub struct LoadedCorpus {
    pub chants: Vec<Chant>,
    /// Present when the corpus came from a raw CSV.
    pub filter_report: Option<FilterReport>,
    /// Chants dropped because they were too short to re-encode.
    pub dropped_by_encoding: usize,
}

/// Loads a corpus from a CSV export or a .jsonl chant file and brings it
/// to the requested encoding.
pub fn load_corpus(args: &CommonArgs) -> Result<LoadedCorpus> {
    let path = args
        .corpus
        .as_ref()
        .ok_or_else(|| user_error("--corpus is required"))?;
    if !path.exists() {
        return Err(user_error(format!("corpus {} does not exist", path.display())));
    }
    let encoding = Encoding::from(args.encoding);
    if path.extension().is_some_and(|e| e == "jsonl") {
        let all = corpus::read_chants_jsonl(path)?;
        let genre = args.genre.into();
        let chants: Vec<Chant> = all
            .into_iter()
            .filter(|c| c.genre == genre)
            .filter(|c| {
                args.source
                    .as_ref()
                    .is_none_or(|s| c.source_id.trim() == s)
            })
            .collect();
        if chants.is_empty() {
            return Err(user_error(format!(
                "{}: no chants match the genre/source filters",
                path.display()
            )));
        }
        let (chants, dropped) = reencode(chants, encoding, path)?;
        Ok(LoadedCorpus {
            chants,
            filter_report: None,
            dropped_by_encoding: dropped,
        })
    } else {
        let records = corpus::read_records(path, &CsvColumns::default())?;
        let mut rules = FilterRules::new(args.genre.into());
        rules.source = args.source.clone();
        let (chants, report) = corpus::filter_corpus(&records, &rules);
        if chants.is_empty() {
            return Err(user_error(format!(
                "{}: no usable chants after filtering ({} records read)",
                path.display(),
                report.total
            )));
        }
        let (chants, dropped) = corpus::encode_corpus(chants, encoding)?;
        Ok(LoadedCorpus {
            chants,
            filter_report: Some(report),
            dropped_by_encoding: dropped,
        })
    }
}

/// Reads a chant .jsonl file and brings it to the requested encoding.
pub fn load_jsonl(path: &Path, encoding: Encoding) -> Result<(Vec<Chant>, usize)> {
    let chants = corpus::read_chants_jsonl(path)?;
    reencode(chants, encoding, path)
}

fn reencode(
    chants: Vec<Chant>,
    encoding: Encoding,
    path: &Path,
) -> Result<(Vec<Chant>, usize)> {
    let already = chants.iter().all(|c| c.encoding == encoding);
    if already {
        return Ok((chants, 0));
    }
    if chants.iter().any(|c| c.encoding == Encoding::Interval) {
        return Err(user_error(format!(
            "{}: stored interval-encoded chants cannot be re-encoded as {encoding}",
            path.display()
        )));
    }
    Ok(corpus::encode_corpus(chants, encoding)?)
}

/// Encodes every chant's tones against a fixed alphabet.
pub fn encode_tones(
    alphabet: &ToneAlphabet,
    chants: &[Chant],
) -> Result<Vec<Vec<ToneId>>> {
    chants
        .iter()
        .map(|c| {
            alphabet
                .encode_seq(&c.tones)
                .with_context(|| format!("encoding chant {}", c.record_id))
        })
        .collect()
}

/// A fresh untrained model whose alphabet covers the given chants.
pub fn template_model(chants: &[Chant]) -> Result<NhpylmModel> {
    let alphabet = corpus::build_alphabet(chants)?;
    Ok(NhpylmModel::new(alphabet, NhpylmConfig::default()))
}

/// Trains one segment model, drawing initialization and sweeps from
/// separate named streams.
pub fn train_single(
    train_tones: &[Vec<ToneId>],
    validation_tones: &[Vec<ToneId>],
    template: NhpylmModel,
    args: &CommonArgs,
    streams: &SeedStreams,
) -> Result<TrainOutcome> {
    let config = TrainConfig {
        max_sweeps: args.max_sweeps,
        patience: args.patience,
        seed: streams.gibbs,
        ..TrainConfig::default()
    };
    let mut init_rng = ChaCha8Rng::seed_from_u64(streams.init);
    let state = trainer::init_random(train_tones, template, &mut init_rng)?;
    let mut gibbs_rng = ChaCha8Rng::seed_from_u64(streams.gibbs);
    Ok(trainer::train_from(
        state,
        train_tones,
        validation_tones,
        &config,
        &mut gibbs_rng,
    )?)
}

/// Trains the eight per-mode models; per-mode streams derive from the
/// gibbs stream inside.
pub fn train_modes(
    train: &[LabeledChant],
    validation: &[LabeledChant],
    template: &NhpylmModel,
    args: &CommonArgs,
    streams: &SeedStreams,
) -> Result<EnsembleOutcome> {
    let config = TrainConfig {
        max_sweeps: args.max_sweeps,
        patience: args.patience,
        seed: streams.gibbs,
        ..TrainConfig::default()
    };
    Ok(train_ensemble(
        train,
        validation,
        template,
        &config,
        EnsembleConfig::default(),
    )?)
}

pub fn labeled(chants: &[Chant], tones: &[Vec<ToneId>]) -> Vec<LabeledChant> {
    chants
        .iter()
        .zip(tones)
        .map(|(c, t)| LabeledChant {
            tones: t.clone(),
            mode: c.mode,
        })
        .collect()
}

/// Per-chant feature documents (bags of segment keys) for the
/// feature-based methods. Model-based methods pass their segmentations.
pub fn feature_docs(
    method: MethodArg,
    chants: &[Chant],
    tones: &[Vec<ToneId>],
    segmentations: Option<&[Segmentation]>,
) -> Result<Vec<Vec<String>>> {
    let keys_of = |seg: &Segmentation, t: &[ToneId]| -> Vec<String> {
        seg.segments(t).map(segment_key).collect()
    };
    match method {
        MethodArg::Nhpylm | MethodArg::NhpylmClasses => {
            let segs = segmentations.expect("model methods supply segmentations");
            Ok(segs
                .iter()
                .zip(tones)
                .map(|(s, t)| keys_of(s, t))
                .collect())
        }
        MethodArg::Ngram4 => tones
            .iter()
            .map(|t| Ok(keys_of(&baselines::ngram_segment(t.len(), 4)?, t)))
            .collect(),
        MethodArg::Syllables | MethodArg::Words => {
            let unit = if method == MethodArg::Syllables {
                UnitKind::Syllable
            } else {
                UnitKind::Word
            };
            chants
                .iter()
                .zip(tones)
                .map(|(c, t)| Ok(keys_of(&baselines::unit_segment(c, unit)?, t)))
                .collect()
        }
        MethodArg::Overlap17 => Ok(tones.iter().map(|t| ngram_bag(t, 7)).collect()),
        MethodArg::Classical => Err(user_error(
            "classical features are not segment documents",
        )),
    }
}

// --- Output writers ----------------------------------------------------

#[derive(Serialize)]
struct SegmentationRow<'a> {
    record_id: &'a str,
    segments: Vec<Vec<String>>,
}

/// Writes one JSON object per chant: record id plus its segments as
/// arrays of tone symbols.
pub fn write_segmentations(
    path: &Path,
    alphabet: &ToneAlphabet,
    chants: &[Chant],
    tones: &[Vec<ToneId>],
    segmentations: &[Segmentation],
) -> Result<()> {
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path)
            .with_context(|| format!("writing {}", path.display()))?,
    );
    for ((chant, t), seg) in chants.iter().zip(tones).zip(segmentations) {
        let segments = seg
            .segments(t)
            .map(|slice| {
                slice
                    .iter()
                    .map(|&id| {
                        alphabet
                            .decode(id)
                            .map(|tone| tone.to_string())
                            .ok_or_else(|| {
                                anyhow::anyhow!("tone id {id} outside the model alphabet")
                            })
                    })
                    .collect::<Result<Vec<String>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let row = SegmentationRow {
            record_id: &chant.record_id,
            segments,
        };
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Writes per-sweep training history: perplexities, the length
/// parameter, and per-depth discount/concentration pairs of both trees.
pub fn write_history_csv(path: &Path, history: &[SweepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("writing {}", path.display()))?;
    let (seg_depths, tone_depths) = history
        .first()
        .map(|r| (r.segment_params.len(), r.tone_params.len()))
        .unwrap_or((0, 0));
    let mut header = vec![
        "sweep".to_string(),
        "train_perplexity".to_string(),
        "validation_perplexity".to_string(),
        "lambda".to_string(),
    ];
    for d in 0..seg_depths {
        header.push(format!("segment_d_{d}"));
        header.push(format!("segment_theta_{d}"));
    }
    for d in 0..tone_depths {
        header.push(format!("tone_d_{d}"));
        header.push(format!("tone_theta_{d}"));
    }
    w.write_record(&header)?;
    for rec in history {
        let mut row = vec![
            rec.sweep.to_string(),
            rec.train_perplexity.to_string(),
            rec.validation_perplexity.to_string(),
            rec.lambda.to_string(),
        ];
        for (d, theta) in rec.segment_params.iter().chain(&rec.tone_params) {
            row.push(d.to_string());
            row.push(theta.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Creates the output directory if needed and rejects files in its place.
pub fn ensure_out_dir(args: &CommonArgs) -> Result<std::path::PathBuf> {
    let out = args
        .out
        .as_ref()
        .ok_or_else(|| user_error("--out is required"))?;
    if out.exists() && !out.is_dir() {
        return Err(user_error(format!(
            "{} exists and is not a directory",
            out.display()
        )));
    }
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))?;
    Ok(out.clone())
}
