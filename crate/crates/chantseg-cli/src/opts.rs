//! Command-line surface: subcommands, flags, and config-file overrides.

use anyhow::{bail, Context, Result};
use chantseg::corpus::{Encoding, Genre, Grouping};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "chantseg",
    version,
    about = "Unsupervised chant segmentation and mode classification experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter a corpus CSV, clean melodies, and write train/validation/test splits.
    Ingest(CommonArgs),
    /// Train a segmentation model (or a per-mode ensemble) and save it.
    Train(CommonArgs),
    /// Segment a corpus with a trained model or a baseline rule.
    Segment(CommonArgs),
    /// Predict modes for a corpus with a trained per-mode ensemble.
    Classify(CommonArgs),
    /// Run the full train/test protocol over several seeds and report metrics.
    Evaluate(CommonArgs),
    /// Compute positional segment-length and uniqueness curves.
    Analyze(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Corpus to read: a chant CSV export, a .jsonl chant file, or a
    /// directory written by `ingest`.
    #[arg(long)]
    pub corpus: Option<PathBuf>,

    /// Chant genre to keep when filtering a CSV corpus.
    #[arg(long, value_enum, default_value_t = GenreArg::Antiphon)]
    pub genre: GenreArg,

    /// Melody encoding: absolute pitches or diatonic steps.
    #[arg(long, value_enum, default_value_t = EncodingArg::Pitch)]
    pub encoding: EncodingArg,

    /// Keep only records whose source id equals this value.
    #[arg(long)]
    pub source: Option<String>,

    /// Segmentation/classification method.
    #[arg(long, value_enum, default_value_t = MethodArg::Nhpylm)]
    pub method: MethodArg,

    /// Random seeds, one experiment repetition each.
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
    pub seeds: Vec<u64>,

    /// Output directory; created if missing.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// key = value file whose entries override the flags above.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Keep chants sharing a Cantus ID in one split partition.
    #[arg(long)]
    pub group_by_cantus_id: bool,

    /// Maximum Gibbs sweeps per training run.
    #[arg(long, default_value_t = 100)]
    pub max_sweeps: usize,

    /// Sweeps without validation improvement before training stops.
    #[arg(long, default_value_t = 10)]
    pub patience: usize,

    /// Trained model file (for segment, classify, and analyze).
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GenreArg {
    Antiphon,
    Responsory,
}

impl From<GenreArg> for Genre {
    fn from(g: GenreArg) -> Genre {
        match g {
            GenreArg::Antiphon => Genre::Antiphon,
            GenreArg::Responsory => Genre::Responsory,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EncodingArg {
    Pitch,
    Interval,
}

impl From<EncodingArg> for Encoding {
    fn from(e: EncodingArg) -> Encoding {
        match e {
            EncodingArg::Pitch => Encoding::Pitch,
            EncodingArg::Interval => Encoding::Interval,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    /// One segment model for the whole corpus; SVM over its segments.
    Nhpylm,
    /// Eight per-mode segment models; generative mode classifier.
    NhpylmClasses,
    /// Fixed four-tone chunks.
    Ngram4,
    /// Segments from syllable annotations.
    Syllables,
    /// Segments from word annotations.
    Words,
    /// Final pitch, initial pitch, and range features.
    Classical,
    /// All overlapping 1..7-grams as features.
    Overlap17,
}

impl MethodArg {
    pub fn as_str(&self) -> &'static str {
        match self {
            MethodArg::Nhpylm => "nhpylm",
            MethodArg::NhpylmClasses => "nhpylm-classes",
            MethodArg::Ngram4 => "ngram4",
            MethodArg::Syllables => "syllables",
            MethodArg::Words => "words",
            MethodArg::Classical => "classical",
            MethodArg::Overlap17 => "overlap17",
        }
    }
}

impl fmt::Display for MethodArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl CommonArgs {
    pub fn grouping(&self) -> Grouping {
        if self.group_by_cantus_id {
            Grouping::CantusId
        } else {
            Grouping::Record
        }
    }

    /// Applies config-file entries on top of the parsed flags. Entries
    /// win over flags; unknown keys are an error.
    pub fn apply_config_file(&mut self) -> Result<()> {
        let Some(path) = self.config.clone() else {
            return Ok(());
        };
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!(
                    "{}:{}: expected key = value, got {raw:?}",
                    path.display(),
                    lineno + 1
                );
            };
            let key = key.trim().replace('_', "-");
            let value = value.trim();
            let parse_err = |what: &str| {
                anyhow::anyhow!(
                    "{}:{}: bad {what} value {value:?}",
                    path.display(),
                    lineno + 1
                )
            };
            match key.as_str() {
                "corpus" => self.corpus = Some(PathBuf::from(value)),
                "genre" => {
                    self.genre = GenreArg::from_str(value, true)
                        .map_err(|_| parse_err("genre"))?;
                }
                "encoding" => {
                    self.encoding = EncodingArg::from_str(value, true)
                        .map_err(|_| parse_err("encoding"))?;
                }
                "source" => self.source = Some(value.to_string()),
                "method" => {
                    self.method = MethodArg::from_str(value, true)
                        .map_err(|_| parse_err("method"))?;
                }
                "seeds" => {
                    self.seeds = value
                        .split(',')
                        .map(|s| s.trim().parse::<u64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| parse_err("seeds"))?;
                }
                "out" => self.out = Some(PathBuf::from(value)),
                "group-by-cantus-id" => {
                    self.group_by_cantus_id = parse_bool(value).ok_or_else(|| {
                        parse_err("group-by-cantus-id")
                    })?;
                }
                "max-sweeps" => {
                    self.max_sweeps = value.parse().map_err(|_| parse_err("max-sweeps"))?;
                }
                "patience" => {
                    self.patience = value.parse().map_err(|_| parse_err("patience"))?;
                }
                "model" => self.model = Some(PathBuf::from(value)),
                other => bail!(
                    "{}:{}: unknown config key {other:?}",
                    path.display(),
                    lineno + 1
                ),
            }
        }
        if self.seeds.is_empty() {
            bail!("{}: seeds must not be empty", path.display());
        }
        Ok(())
    }

    /// Resolved settings for the manifest's config echo.
    pub fn settings(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        map.insert("corpus".into(), path(&self.corpus));
        map.insert(
            "genre".into(),
            match self.genre {
                GenreArg::Antiphon => "antiphon".into(),
                GenreArg::Responsory => "responsory".into(),
            },
        );
        map.insert("encoding".into(), Encoding::from(self.encoding).to_string());
        map.insert("source".into(), self.source.clone().unwrap_or_default());
        map.insert("method".into(), self.method.as_str().into());
        map.insert(
            "seeds".into(),
            self.seeds
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        map.insert("out".into(), path(&self.out));
        map.insert(
            "group_by_cantus_id".into(),
            self.group_by_cantus_id.to_string(),
        );
        map.insert("max_sweeps".into(), self.max_sweeps.to_string());
        map.insert("patience".into(), self.patience.to_string());
        map.insert("model".into(), path(&self.model));
        map
    }
}

fn parse_bool(value: &str) -> Option<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Some(true),
        "false" | "no" | "0" => Some(false),
        _ => None,
    }
}
