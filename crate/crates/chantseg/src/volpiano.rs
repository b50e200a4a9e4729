//! Volpiano string cleaning and boundary extraction.
//!
//! Volpiano encodes a melody as text: letters are pitches, hyphen runs
//! separate notes (`-`), syllables (`--`), and words (`---`). Clefs,
//! barlines, accidentals and other markup carry no pitch content and are
//! dropped once boundaries have been read off.

use crate::error::{Error, Result};
use crate::tone::gamut_index;

/// How raw Volpiano strings are cleaned.
#[derive(Debug, Clone)]
pub struct CleaningConfig {
    /// Error on characters outside the known Volpiano table instead of
    /// skipping them.
    pub strict: bool,
    /// Treat liquescent (uppercase) note letters as their plain pitch.
    /// When disabled the ornamented notes are dropped entirely.
    pub fold_liquescents: bool,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        CleaningConfig {
            strict: false,
            fold_liquescents: true,
        }
    }
}

/// Barline characters: single, double, and thick bars.
pub const BARLINES: [char; 3] = ['3', '4', '5'];

/// Non-pitch characters that are legal Volpiano markup: clefs, barlines,
/// the missing-pitch marker, accidentals, and spacing/punctuation that
/// occurs in practice.
const KNOWN_MARKUP: &str = "1234567iwxyzIWXYZ(.,[]{}";

/// A cleaned melody: pitch letters plus interior cut positions.
///
/// A cut at position `p` separates `pitches[p-1]` from `pitches[p]`, so
/// valid cuts lie in `1..=len-1`. Word cuts are always syllable cuts too.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedMelody {
    pub pitches: Vec<char>,
    pub syllable_cuts: Vec<usize>,
    pub word_cuts: Vec<usize>,
}

/// Maps one raw character to a pitch letter, if it denotes one.
fn as_pitch(c: char, config: &CleaningConfig) -> Option<char> {
    if gamut_index(c).is_some() {
        return Some(c);
    }
    if config.fold_liquescents {
        // Uppercase note letters mark liquescence on the same pitch; the
        // right parenthesis is the liquescent form of `9`.
        if c == ')' {
            return Some('9');
        }
        let lower = c.to_ascii_lowercase();
        if c.is_ascii_uppercase() && gamut_index(lower).is_some() {
            return Some(lower);
        }
    }
    None
}

fn is_known_markup(c: char, config: &CleaningConfig) -> bool {
    if KNOWN_MARKUP.contains(c) || c.is_whitespace() || c == ')' {
        return true;
    }
    // With folding off, liquescent letters are still legal markup; they
    // are just not kept as pitches.
    if !config.fold_liquescents && c.is_ascii_uppercase() {
        return gamut_index(c.to_ascii_lowercase()).is_some();
    }
    false
}

/// Extracts the pitch sequence and syllable/word cut positions from a raw
/// Volpiano string.
///
/// Hyphens between two pitches decide the boundary level: two hyphens
/// mark a syllable cut, three or more a word cut (which is also recorded
/// as a syllable cut). Leading and trailing markup is ignored.
pub fn parse_volpiano(raw: &str, config: &CleaningConfig) -> Result<ParsedMelody> {
    let mut pitches: Vec<char> = Vec::new();
    let mut syllable_cuts: Vec<usize> = Vec::new();
    let mut word_cuts: Vec<usize> = Vec::new();
    let mut hyphens_since_pitch = 0usize;

    for c in raw.chars() {
        if c == '-' {
            hyphens_since_pitch += 1;
            continue;
        }
        if let Some(p) = as_pitch(c, config) {
            if !pitches.is_empty() {
                let cut = pitches.len();
                if hyphens_since_pitch >= 3 {
                    syllable_cuts.push(cut);
                    word_cuts.push(cut);
                } else if hyphens_since_pitch == 2 {
                    syllable_cuts.push(cut);
                }
            }
            pitches.push(p);
            hyphens_since_pitch = 0;
        } else if !is_known_markup(c, config) && config.strict {
            return Err(Error::UnknownCharacter(c));
        }
        // Known markup (and unknown characters in lenient mode) is
        // skipped without resetting the hyphen count, so a barline in
        // the middle of a separator does not hide the boundary.
    }

    if pitches.is_empty() {
        return Err(Error::EmptyMelody);
    }
    Ok(ParsedMelody {
        pitches,
        syllable_cuts,
        word_cuts,
    })
}

/// Truncates an antiphon's Volpiano at the first barline that still has
/// pitch material after it, removing the differentia. Returns the input
/// unchanged when no such barline exists.
pub fn strip_differentia(raw: &str) -> String {
    let config = CleaningConfig::default();
    if let Some(pos) = raw.find(|c| BARLINES.contains(&c)) {
        let tail = &raw[pos + 1..];
        if tail.chars().any(|c| as_pitch(c, &config).is_some()) {
            return raw[..=pos].to_string();
        }
    }
    raw.to_string()
}

/// Renders a parsed melody back to canonical cleaned Volpiano: a clef,
/// then pitches joined by separators matching the recorded cuts.
pub fn to_clean_volpiano(melody: &ParsedMelody) -> String {
    let mut out = String::from("1---");
    for (i, p) in melody.pitches.iter().enumerate() {
        if i > 0 {
            if melody.word_cuts.contains(&i) {
                out.push_str("---");
            } else if melody.syllable_cuts.contains(&i) {
                out.push_str("--");
            } else {
                out.push('-');
            }
        }
        out.push(*p);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(raw: &str) -> ParsedMelody {
        parse_volpiano(raw, &CleaningConfig::default()).unwrap()
    }

    #[test]
    fn separator_runs_set_boundary_levels() {
        let m = parse("1---k--l-k---m---4");
        assert_eq!(m.pitches, vec!['k', 'l', 'k', 'm']);
        assert_eq!(m.syllable_cuts, vec![1, 3]);
        assert_eq!(m.word_cuts, vec![3]);

        let m = parse("1---f-g--h");
        assert_eq!(m.pitches, vec!['f', 'g', 'h']);
        assert_eq!(m.syllable_cuts, vec![2]);
        assert!(m.word_cuts.is_empty());
    }

    #[test]
    fn empty_melody_is_an_error() {
        assert!(matches!(
            parse_volpiano("", &CleaningConfig::default()),
            Err(Error::EmptyMelody)
        ));
        assert!(matches!(
            parse_volpiano("1---3---4", &CleaningConfig::default()),
            Err(Error::EmptyMelody)
        ));
    }

    #[test]
    fn liquescents_fold_to_their_pitch() {
        let m = parse("1---kK--L");
        assert_eq!(m.pitches, vec!['k', 'k', 'l']);

        let dropped = parse_volpiano(
            "1---kK--l",
            &CleaningConfig {
                fold_liquescents: false,
                ..CleaningConfig::default()
            },
        )
        .unwrap();
        assert_eq!(dropped.pitches, vec!['k', 'l']);
    }

    #[test]
    fn accidentals_and_clefs_are_markup() {
        // A flat sign before a pitch does not produce a tone of its own.
        let m = parse("1---i-j--k");
        assert_eq!(m.pitches, vec!['j', 'k']);
        assert_eq!(m.syllable_cuts, vec![1]);
    }

    #[test]
    fn strict_mode_rejects_foreign_characters() {
        let strict = CleaningConfig {
            strict: true,
            ..CleaningConfig::default()
        };
        assert!(matches!(
            parse_volpiano("1---k@l", &strict),
            Err(Error::UnknownCharacter('@'))
        ));
        // Lenient mode skips it.
        assert_eq!(parse("1---k@l").pitches, vec!['k', 'l']);
    }

    #[test]
    fn differentia_truncates_at_first_barline_with_trailing_material() {
        assert_eq!(strip_differentia("1---f-g---4---k-l---3"), "1---f-g---4");
        assert_eq!(strip_differentia("1---f-g---4"), "1---f-g---4");
        assert_eq!(strip_differentia("1---f-g"), "1---f-g");
        // Trailing hyphens after the bar are not pitch material.
        assert_eq!(strip_differentia("1---f-g---3---"), "1---f-g---3---");
    }

    #[test]
    fn clean_round_trip_is_idempotent() {
        for raw in ["1---k--l-k---m---4", "1---f-g--h", "1---9)--A"] {
            let m = parse(raw);
            let cleaned = to_clean_volpiano(&m);
            assert_eq!(parse(&cleaned), m);
        }
    }
}
