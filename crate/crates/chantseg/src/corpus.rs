//! Chant corpus ingestion, filtering, encoding, and splits.

use crate::error::{Error, Result};
use crate::tone::{gamut_index, Tone, ToneAlphabet};
use crate::volpiano::{parse_volpiano, strip_differentia, CleaningConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Chant genre under study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Genre {
    Antiphon,
    Responsory,
}

impl Genre {
    /// Matches the genre tokens used by corpus CSV exports.
    pub fn matches_token(&self, token: &str) -> bool {
        let t = token.trim().to_ascii_lowercase();
        match self {
            Genre::Antiphon => matches!(t.as_str(), "a" | "ant" | "antiphon" | "genre_a"),
            Genre::Responsory => matches!(t.as_str(), "r" | "resp" | "responsory" | "genre_r"),
        }
    }
}

impl fmt::Display for Genre {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Genre::Antiphon => write!(f, "antiphon"),
            Genre::Responsory => write!(f, "responsory"),
        }
    }
}

impl std::str::FromStr for Genre {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if Genre::Antiphon.matches_token(s) {
            Ok(Genre::Antiphon)
        } else if Genre::Responsory.matches_token(s) {
            Ok(Genre::Responsory)
        } else {
            Err(Error::Data(format!("unknown genre {s:?}")))
        }
    }
}

/// Melody encoding: absolute pitches or diatonic step differences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Pitch,
    Interval,
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Encoding::Pitch => write!(f, "pitch"),
            Encoding::Interval => write!(f, "interval"),
        }
    }
}

impl std::str::FromStr for Encoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pitch" | "pitches" => Ok(Encoding::Pitch),
            "interval" | "intervals" => Ok(Encoding::Interval),
            other => Err(Error::Data(format!("unknown encoding {other:?}"))),
        }
    }
}

/// One raw row from a corpus CSV, before any filtering.
#[derive(Debug, Clone)]
pub struct ChantRecord {
    pub record_id: String,
    pub cantus_id: String,
    pub source_id: String,
    pub genre_raw: String,
    pub mode_raw: String,
    pub volpiano_raw: String,
    /// Completeness flag when the CSV carries one.
    pub complete_raw: Option<String>,
}

/// A cleaned, filtered chant ready for modeling.
///
/// Boundary positions are interior cut positions: a cut at `p` separates
/// `tones[p-1]` from `tones[p]`, so `1 <= p <= len-1`. `None` means the
/// annotations are absent, as opposed to an empty (boundary-free) set.
#[derive(Debug, Clone, PartialEq)]
pub struct Chant {
    pub record_id: String,
    pub cantus_id: String,
    pub source_id: String,
    pub genre: Genre,
    pub mode: u8,
    pub encoding: Encoding,
    pub tones: Vec<Tone>,
    pub syllable_boundaries: Option<Vec<usize>>,
    pub word_boundaries: Option<Vec<usize>>,
}

impl Chant {
    /// Checks the structural invariants: mode range, non-empty tones,
    /// interior sorted boundaries, and word cuts being syllable cuts.
    pub fn validate(&self) -> Result<()> {
        if !(1..=8).contains(&self.mode) {
            return Err(Error::Data(format!(
                "chant {}: mode {} out of range",
                self.record_id, self.mode
            )));
        }
        if self.tones.is_empty() {
            return Err(Error::Data(format!("chant {}: no tones", self.record_id)));
        }
        let check_cuts = |cuts: &Vec<usize>, what: &str| -> Result<()> {
            let mut prev = 0usize;
            for &p in cuts {
                if p <= prev || p >= self.tones.len() {
                    return Err(Error::Data(format!(
                        "chant {}: bad {what} cut {p}",
                        self.record_id
                    )));
                }
                prev = p;
            }
            Ok(())
        };
        if let Some(s) = &self.syllable_boundaries {
            check_cuts(s, "syllable")?;
        }
        if let Some(w) = &self.word_boundaries {
            check_cuts(w, "word")?;
            let syl = self.syllable_boundaries.as_deref().unwrap_or(&[]);
            for p in w {
                if !syl.contains(p) {
                    return Err(Error::Data(format!(
                        "chant {}: word cut {p} is not a syllable cut",
                        self.record_id
                    )));
                }
            }
        }
        Ok(())
    }
}

// --- CSV ingestion ---------------------------------------------------

/// Column names used when reading a corpus CSV. Defaults match the
/// CantusCorpus v0.2 export.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvColumns {
    pub id: String,
    pub cantus_id: String,
    pub mode: String,
    pub genre: String,
    pub volpiano: String,
    pub source: String,
    /// Completeness flag column; used only when present in the header.
    pub complete: String,
}

impl Default for CsvColumns {
    fn default() -> Self {
        CsvColumns {
            id: "id".into(),
            cantus_id: "cantus_id".into(),
            mode: "mode".into(),
            genre: "genre_id".into(),
            volpiano: "volpiano".into(),
            source: "source_id".into(),
            complete: "complete".into(),
        }
    }
}

/// Reads chant records from a CSV file with a header row.
pub fn read_records(path: &Path, columns: &CsvColumns) -> Result<Vec<ChantRecord>> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let header = reader.headers()?.clone();
    let find = |name: &str| header.iter().position(|h| h == name);
    let required = |name: &str| {
        find(name).ok_or_else(|| Error::Data(format!("column {name:?} missing from {path:?}")))
    };

    let id_col = required(&columns.id)?;
    let cantus_col = required(&columns.cantus_id)?;
    let mode_col = required(&columns.mode)?;
    let genre_col = required(&columns.genre)?;
    let volpiano_col = required(&columns.volpiano)?;
    let source_col = required(&columns.source)?;
    let complete_col = find(&columns.complete);

    let field = |row: &csv::StringRecord, col: usize| row.get(col).unwrap_or("").to_string();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        records.push(ChantRecord {
            record_id: field(&row, id_col),
            cantus_id: field(&row, cantus_col),
            source_id: field(&row, source_col),
            genre_raw: field(&row, genre_col),
            mode_raw: field(&row, mode_col),
            volpiano_raw: field(&row, volpiano_col),
            complete_raw: complete_col.map(|c| field(&row, c)),
        });
    }
    Ok(records)
}

// --- Filtering -------------------------------------------------------

/// Filtering and cleaning rules applied to raw records.
#[derive(Debug, Clone)]
pub struct FilterRules {
    pub genre: Genre,
    /// Keep only records whose source id equals this value.
    pub source: Option<String>,
    pub cleaning: CleaningConfig,
    /// Truncate antiphon melodies at the first barline followed by more
    /// material (differentia removal). Never applied to responsories.
    pub truncate_differentia: bool,
}

impl FilterRules {
    pub fn new(genre: Genre) -> Self {
        FilterRules {
            genre,
            source: None,
            cleaning: CleaningConfig::default(),
            truncate_differentia: true,
        }
    }
}

/// Per-rule drop counts from one filtering pass.
/// `kept + wrong_genre + wrong_source + bad_mode + incomplete + no_melody`
/// always equals `total`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub total: usize,
    pub kept: usize,
    pub wrong_genre: usize,
    pub wrong_source: usize,
    pub bad_mode: usize,
    pub incomplete: usize,
    pub no_melody: usize,
}

fn is_flagged_complete(raw: &str) -> bool {
    matches!(
        raw.trim().to_ascii_lowercase().as_str(),
        "true" | "t" | "yes" | "y" | "1" | "complete"
    )
}

/// Keeps records of the requested genre with a regular mode annotation
/// and a non-empty cleaned melody, producing modeling-ready chants.
pub fn filter_corpus(records: &[ChantRecord], rules: &FilterRules) -> (Vec<Chant>, FilterReport) {
    let mut report = FilterReport {
        total: records.len(),
        ..FilterReport::default()
    };
    let mut chants = Vec::new();

    for record in records {
        if !rules.genre.matches_token(&record.genre_raw) {
            report.wrong_genre += 1;
            continue;
        }
        if let Some(source) = &rules.source {
            if record.source_id.trim() != source {
                report.wrong_source += 1;
                continue;
            }
        }
        let mode: u8 = match record.mode_raw.trim().parse() {
            Ok(m) if (1..=8).contains(&m) => m,
            _ => {
                report.bad_mode += 1;
                continue;
            }
        };
        if let Some(flag) = &record.complete_raw {
            if !is_flagged_complete(flag) {
                report.incomplete += 1;
                continue;
            }
        }
        let raw = if rules.genre == Genre::Antiphon && rules.truncate_differentia {
            strip_differentia(&record.volpiano_raw)
        } else {
            record.volpiano_raw.clone()
        };
        let melody = match parse_volpiano(&raw, &rules.cleaning) {
            Ok(m) => m,
            Err(_) => {
                report.no_melody += 1;
                continue;
            }
        };
        chants.push(Chant {
            record_id: record.record_id.clone(),
            cantus_id: record.cantus_id.clone(),
            source_id: record.source_id.clone(),
            genre: rules.genre,
            mode,
            encoding: Encoding::Pitch,
            tones: melody.pitches.into_iter().map(Tone::Pitch).collect(),
            syllable_boundaries: Some(melody.syllable_cuts),
            word_boundaries: Some(melody.word_cuts),
        });
        report.kept += 1;
    }
    (chants, report)
}

// --- Interval encoding -----------------------------------------------

/// Re-encodes a pitch chant as diatonic step differences.
///
/// Tone `i` of the output is `gamut(pitch[i+1]) - gamut(pitch[i])`. A cut
/// after pitch `p` maps to the cut after interval `p-1`; cuts that fall
/// outside the interior of the shorter sequence are dropped. Returns
/// `None` for one-tone chants, whose interval form would be empty.
pub fn to_intervals(chant: &Chant) -> Result<Option<Chant>> {
    if chant.encoding != Encoding::Pitch {
        return Err(Error::NotApplicable(
            "interval encoding requires pitch input".into(),
        ));
    }
    let steps: Vec<i16> = chant
        .tones
        .iter()
        .map(|t| match t {
            Tone::Pitch(c) => {
                gamut_index(*c).ok_or_else(|| Error::UnknownTone(t.to_string()))
            }
            Tone::Interval(_) => Err(Error::NotApplicable("already interval encoded".into())),
        })
        .collect::<Result<_>>()?;
    if steps.len() < 2 {
        return Ok(None);
    }
    let n = steps.len() - 1;
    let map_cuts = |cuts: &Option<Vec<usize>>| {
        cuts.as_ref().map(|v| {
            v.iter()
                .filter_map(|&p| {
                    let q = p.checked_sub(1)?;
                    (q >= 1 && q <= n - 1).then_some(q)
                })
                .collect::<Vec<usize>>()
        })
    };
    Ok(Some(Chant {
        encoding: Encoding::Interval,
        tones: steps.windows(2).map(|w| Tone::Interval(w[1] - w[0])).collect(),
        syllable_boundaries: map_cuts(&chant.syllable_boundaries),
        word_boundaries: map_cuts(&chant.word_boundaries),
        ..chant.clone()
    }))
}

/// Applies the requested encoding to a whole corpus, dropping chants too
/// short to re-encode. Returns the surviving chants and the drop count.
pub fn encode_corpus(chants: Vec<Chant>, encoding: Encoding) -> Result<(Vec<Chant>, usize)> {
    match encoding {
        Encoding::Pitch => Ok((chants, 0)),
        Encoding::Interval => {
            let mut out = Vec::with_capacity(chants.len());
            let mut dropped = 0usize;
            for chant in &chants {
                match to_intervals(chant)? {
                    Some(c) => out.push(c),
                    None => dropped += 1,
                }
            }
            Ok((out, dropped))
        }
    }
}

/// Builds the closed tone alphabet covering a corpus.
pub fn build_alphabet(chants: &[Chant]) -> Result<ToneAlphabet> {
    let mut letters = Vec::new();
    let mut max_step = 0i16;
    let mut saw_interval = false;
    let mut saw_pitch = false;
    for chant in chants {
        for tone in &chant.tones {
            match tone {
                Tone::Pitch(c) => {
                    saw_pitch = true;
                    letters.push(*c);
                }
                Tone::Interval(d) => {
                    saw_interval = true;
                    max_step = max_step.max(d.abs());
                }
            }
        }
    }
    match (saw_pitch, saw_interval) {
        (true, false) => ToneAlphabet::from_pitch_letters(letters),
        (false, true) => ToneAlphabet::interval(max_step),
        (false, false) => Err(Error::EmptyInput),
        (true, true) => Err(Error::Data("mixed encodings in one corpus".into())),
    }
}

// --- Splits ------------------------------------------------------------

/// How a corpus is divided into train/validation/test partitions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Fraction of the corpus assigned to training (validation included).
    pub train_fraction: f64,
    /// Fraction of the training block reserved for validation.
    pub validation_fraction_of_train: f64,
    pub seed: u64,
    pub grouping: Grouping,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// Each chant is assigned independently.
    Record,
    /// All chants sharing a Cantus ID land in the same partition.
    CantusId,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        SplitSpec {
            train_fraction: 0.7,
            validation_fraction_of_train: 0.1,
            seed,
            grouping: Grouping::Record,
        }
    }
}

/// A disjoint, exhaustive partition of a corpus.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<Chant>,
    pub validation: Vec<Chant>,
    pub test: Vec<Chant>,
}

/// Splits a corpus deterministically for a fixed seed.
///
/// Chants are ordered by record id, shuffled once, and cut so that
/// `round(train_fraction * n)` chants form the training block, of which
/// the final `ceil(validation_fraction * block)` become validation.
pub fn split_corpus(chants: &[Chant], spec: &SplitSpec) -> Result<Split> {
    if !(0.0..1.0).contains(&spec.train_fraction)
        || spec.train_fraction <= 0.0
        || !(0.0..1.0).contains(&spec.validation_fraction_of_train)
        || spec.validation_fraction_of_train <= 0.0
    {
        return Err(Error::Config("split fractions must lie in (0,1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = chants.len();

    // Groups of chants that must stay together, in a canonical order.
    let groups: Vec<Vec<&Chant>> = match spec.grouping {
        Grouping::Record => {
            let mut singles: Vec<&Chant> = chants.iter().collect();
            singles.sort_by(|a, b| a.record_id.cmp(&b.record_id));
            singles.into_iter().map(|c| vec![c]).collect()
        }
        Grouping::CantusId => {
            let mut by_id: BTreeMap<&str, Vec<&Chant>> = BTreeMap::new();
            for chant in chants {
                by_id.entry(chant.cantus_id.as_str()).or_default().push(chant);
            }
            by_id
                .into_values()
                .map(|mut group| {
                    group.sort_by(|a, b| a.record_id.cmp(&b.record_id));
                    group
                })
                .collect()
        }
    };

    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.shuffle(&mut rng);

    let train_target = (spec.train_fraction * n as f64).round() as usize;
    let mut train_block: Vec<&Chant> = Vec::new();
    let mut test: Vec<&Chant> = Vec::new();
    for &g in &order {
        if train_block.len() < train_target {
            train_block.extend(&groups[g]);
        } else {
            test.extend(&groups[g]);
        }
    }

    let val_target =
        (spec.validation_fraction_of_train * train_block.len() as f64).ceil() as usize;
    // Validation groups come off the end of the training block so that
    // grouped chants never straddle the train/validation line.
    let mut cut = train_block.len();
    if spec.grouping == Grouping::CantusId {
        while train_block.len() - cut < val_target && cut > 0 {
            let id = &train_block[cut - 1].cantus_id;
            while cut > 0 && &train_block[cut - 1].cantus_id == id {
                cut -= 1;
            }
        }
    } else {
        cut = train_block.len().saturating_sub(val_target);
    }

    let validation: Vec<Chant> = train_block.split_off(cut).into_iter().cloned().collect();
    let train: Vec<Chant> = train_block.into_iter().cloned().collect();
    let test: Vec<Chant> = test.into_iter().cloned().collect();

    for (name, part) in [("train", &train), ("validation", &validation), ("test", &test)] {
        if part.is_empty() {
            return Err(Error::DegenerateSplit(format!("{name} partition is empty")));
        }
    }
    Ok(Split {
        train,
        validation,
        test,
    })
}

// --- JSON-lines IO -----------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ChantWire {
    record_id: String,
    cantus_id: String,
    source_id: String,
    genre: Genre,
    mode: u8,
    encoding: Encoding,
    tones: Vec<String>,
    #[serde(default)]
    syllable_boundaries: Option<Vec<usize>>,
    #[serde(default)]
    word_boundaries: Option<Vec<usize>>,
}

impl From<&Chant> for ChantWire {
    fn from(c: &Chant) -> Self {
        ChantWire {
            record_id: c.record_id.clone(),
            cantus_id: c.cantus_id.clone(),
            source_id: c.source_id.clone(),
            genre: c.genre,
            mode: c.mode,
            encoding: c.encoding,
            tones: c.tones.iter().map(|t| t.to_string()).collect(),
            syllable_boundaries: c.syllable_boundaries.clone(),
            word_boundaries: c.word_boundaries.clone(),
        }
    }
}

fn parse_tone(encoding: Encoding, s: &str) -> Result<Tone> {
    match encoding {
        Encoding::Pitch => {
            let mut chars = s.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) if gamut_index(c).is_some() => Ok(Tone::Pitch(c)),
                _ => Err(Error::UnknownTone(s.to_string())),
            }
        }
        Encoding::Interval => s
            .parse::<i16>()
            .map(Tone::Interval)
            .map_err(|_| Error::UnknownTone(s.to_string())),
    }
}

impl TryFrom<ChantWire> for Chant {
    type Error = Error;

    fn try_from(w: ChantWire) -> Result<Self> {
        let tones = w
            .tones
            .iter()
            .map(|s| parse_tone(w.encoding, s))
            .collect::<Result<_>>()?;
        let chant = Chant {
            record_id: w.record_id,
            cantus_id: w.cantus_id,
            source_id: w.source_id,
            genre: w.genre,
            mode: w.mode,
            encoding: w.encoding,
            tones,
            syllable_boundaries: w.syllable_boundaries,
            word_boundaries: w.word_boundaries,
        };
        chant.validate()?;
        Ok(chant)
    }
}

/// Writes one chant per line as JSON.
pub fn write_chants_jsonl<W: Write>(out: &mut W, chants: &[Chant]) -> Result<()> {
    for chant in chants {
        serde_json::to_writer(&mut *out, &ChantWire::from(chant))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads chants from JSON-lines, validating every record.
pub fn read_chants_jsonl(path: &Path) -> Result<Vec<Chant>> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut chants = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: ChantWire = serde_json::from_str(&line)?;
        chants.push(Chant::try_from(wire)?);
    }
    Ok(chants)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, genre: &str, mode: &str, volpiano: &str) -> ChantRecord {
        ChantRecord {
            record_id: id.to_string(),
            cantus_id: format!("cid-{id}"),
            source_id: "src".to_string(),
            genre_raw: genre.to_string(),
            mode_raw: mode.to_string(),
            volpiano_raw: volpiano.to_string(),
            complete_raw: None,
        }
    }

    fn pitch_chant(id: &str, letters: &str) -> Chant {
        Chant {
            record_id: id.to_string(),
            cantus_id: format!("cid-{id}"),
            source_id: "src".to_string(),
            genre: Genre::Antiphon,
            mode: 1,
            encoding: Encoding::Pitch,
            tones: letters.chars().map(Tone::Pitch).collect(),
            syllable_boundaries: Some(vec![]),
            word_boundaries: Some(vec![]),
        }
    }

    #[test]
    fn filter_keeps_only_regular_modes_of_the_genre() {
        let records = vec![
            record("1", "genre_a", "1", "1---k--l"),
            record("2", "genre_a", "1S", "1---k--l"),
            record("3", "genre_r", "2", "1---k--l"),
            record("4", "genre_a", "8", "1---3---4"),
            record("5", "genre_a", "3", "1---f-g---4---k-l"),
        ];
        let (chants, report) = filter_corpus(&records, &FilterRules::new(Genre::Antiphon));
        assert_eq!(report.total, 5);
        assert_eq!(report.kept, 2);
        assert_eq!(report.bad_mode, 1);
        assert_eq!(report.wrong_genre, 1);
        assert_eq!(report.no_melody, 1);
        assert_eq!(
            report.kept
                + report.wrong_genre
                + report.wrong_source
                + report.bad_mode
                + report.incomplete
                + report.no_melody,
            report.total
        );
        // The differentia after the barline was removed.
        assert_eq!(chants[1].tones, vec![Tone::Pitch('f'), Tone::Pitch('g')]);
    }

    #[test]
    fn intervals_are_gamut_step_differences() {
        let c = pitch_chant("1", "fgff");
        let i = to_intervals(&c).unwrap().unwrap();
        assert_eq!(
            i.tones,
            vec![Tone::Interval(1), Tone::Interval(-1), Tone::Interval(0)]
        );
        // Transposition invariance: same contour two steps down.
        let c2 = pitch_chant("2", "dedd");
        let i2 = to_intervals(&c2).unwrap().unwrap();
        assert_eq!(i.tones, i2.tones);

        let c3 = pitch_chant("3", "fa");
        let i3 = to_intervals(&c3).unwrap().unwrap();
        assert_eq!(i3.tones, vec![Tone::Interval(-5)]);
    }

    #[test]
    fn interval_boundaries_shift_and_collapse() {
        let mut c = pitch_chant("1", "kkkk");
        c.syllable_boundaries = Some(vec![1, 2, 3]);
        c.word_boundaries = Some(vec![1]);
        let i = to_intervals(&c).unwrap().unwrap();
        // Three intervals; cut 1 maps to 0 (dropped), 2 -> 1, 3 -> 2.
        assert_eq!(i.syllable_boundaries, Some(vec![1, 2]));
        assert_eq!(i.word_boundaries, Some(vec![]));
        assert_eq!(i.tones.len(), c.tones.len() - 1);

        let single = pitch_chant("2", "k");
        assert!(to_intervals(&single).unwrap().is_none());
    }

    #[test]
    fn split_sizes_follow_the_fractions() {
        let chants: Vec<Chant> = (0..10)
            .map(|i| pitch_chant(&format!("c{i:02}"), "klkm"))
            .collect();
        let split = split_corpus(&chants, &SplitSpec::new(7)).unwrap();
        assert_eq!(split.train.len(), 6);
        assert_eq!(split.validation.len(), 1);
        assert_eq!(split.test.len(), 3);

        // Determinism.
        let again = split_corpus(&chants, &SplitSpec::new(7)).unwrap();
        let ids = |part: &[Chant]| part.iter().map(|c| c.record_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&split.train), ids(&again.train));
        assert_eq!(ids(&split.test), ids(&again.test));

        // Different seed, different shuffle (with overwhelming probability).
        let other = split_corpus(&chants, &SplitSpec::new(8)).unwrap();
        assert_ne!(ids(&split.test), ids(&other.test));
    }

    #[test]
    fn grouped_split_keeps_cantus_ids_together() {
        let mut chants: Vec<Chant> = (0..12)
            .map(|i| pitch_chant(&format!("c{i:02}"), "klkm"))
            .collect();
        for (i, chant) in chants.iter_mut().enumerate() {
            chant.cantus_id = format!("group{}", i / 2);
        }
        let spec = SplitSpec {
            grouping: Grouping::CantusId,
            ..SplitSpec::new(3)
        };
        for seed in 0..20u64 {
            let split = split_corpus(&chants, &SplitSpec { seed, ..spec.clone() }).unwrap();
            let part_of = |id: &str| -> usize {
                let hit = |p: &[Chant]| p.iter().any(|c| c.record_id == id);
                if hit(&split.train) {
                    0
                } else if hit(&split.validation) {
                    1
                } else {
                    2
                }
            };
            for i in (0..12).step_by(2) {
                let a = format!("c{i:02}");
                let b = format!("c{:02}", i + 1);
                assert_eq!(part_of(&a), part_of(&b), "seed {seed}");
            }
        }
    }

    #[test]
    fn degenerate_split_is_rejected() {
        let chants = vec![pitch_chant("1", "k")];
        assert!(matches!(
            split_corpus(&chants, &SplitSpec::new(0)),
            Err(Error::DegenerateSplit(_))
        ));
    }

    #[test]
    fn jsonl_round_trip_preserves_chants() {
        let mut c = pitch_chant("1", "klkm");
        c.syllable_boundaries = Some(vec![1, 3]);
        c.word_boundaries = Some(vec![3]);
        let i = {
            let base = pitch_chant("2", "fgff");
            to_intervals(&base).unwrap().unwrap()
        };
        let chants = vec![c, i];

        let mut buf = Vec::new();
        write_chants_jsonl(&mut buf, &chants).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chants.jsonl");
        std::fs::write(&path, &buf).unwrap();
        let back = read_chants_jsonl(&path).unwrap();
        assert_eq!(back, chants);
    }

    #[test]
    fn alphabet_covers_every_corpus_tone() {
        let chants = vec![pitch_chant("1", "klkm"), pitch_chant("2", "fgh")];
        let alphabet = build_alphabet(&chants).unwrap();
        for chant in &chants {
            for tone in &chant.tones {
                assert!(alphabet.encode(tone).is_some());
            }
        }
        assert_eq!(alphabet.size(), 6);

        let (intervals, dropped) = encode_corpus(chants, Encoding::Interval).unwrap();
        assert_eq!(dropped, 0);
        let ia = build_alphabet(&intervals).unwrap();
        for chant in &intervals {
            for tone in &chant.tones {
                assert!(ia.encode(tone).is_some());
            }
        }
    }
}
