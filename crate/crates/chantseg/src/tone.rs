//! Tone symbols and closed tone alphabets.
//!
//! A tone is either a Volpiano pitch letter or a signed diatonic step
//! difference between two consecutive pitches. Models work on dense
//! integer ids; [`ToneAlphabet`] owns the bijection and reserves one
//! extra id past the alphabet for the end-of-segment marker.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Volpiano pitch letters in scale order, one diatonic step apart.
/// The letter `i` is not part of the gamut.
pub const PITCH_GAMUT: [char; 19] = [
    '9', 'a', 'b', 'c', 'd', 'e', 'f', 'g', 'h', 'j', 'k', 'l', 'm', 'n', 'o', 'p', 'q', 'r', 's',
];

/// Scale-step number of a pitch letter, if it is in the gamut.
pub fn gamut_index(letter: char) -> Option<i16> {
    PITCH_GAMUT
        .iter()
        .position(|&c| c == letter)
        .map(|i| i as i16)
}

/// One melodic symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tone {
    /// A pitch letter from the Volpiano gamut.
    Pitch(char),
    /// A signed diatonic step difference.
    Interval(i16),
}

impl fmt::Display for Tone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tone::Pitch(c) => write!(f, "{c}"),
            Tone::Interval(d) => write!(f, "{d}"),
        }
    }
}

impl std::str::FromStr for Tone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) if gamut_index(c).is_some() => return Ok(Tone::Pitch(c)),
            _ => {}
        }
        s.parse::<i16>()
            .map(Tone::Interval)
            .map_err(|_| Error::UnknownTone(s.to_string()))
    }
}

/// Dense id of a tone inside a [`ToneAlphabet`].
pub type ToneId = u32;

/// A closed set of tone symbols with a dense id mapping.
///
/// Ids run from 0 to `size() - 1`; `end_id()` is the id just past the
/// alphabet, used as the end-of-segment marker by the tone model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ToneAlphabet {
    /// Pitch letters sorted by gamut index.
    Pitch { letters: Vec<char> },
    /// All signed steps in `-bound..=bound`.
    Interval { bound: i16 },
}

impl ToneAlphabet {
    /// Alphabet of the given pitch letters, deduplicated and sorted by
    /// gamut index. Letters outside the gamut are rejected.
    pub fn from_pitch_letters(letters: impl IntoIterator<Item = char>) -> Result<Self> {
        let mut indexed: Vec<(i16, char)> = Vec::new();
        for c in letters {
            let idx = gamut_index(c).ok_or(Error::UnknownCharacter(c))?;
            if !indexed.iter().any(|&(_, seen)| seen == c) {
                indexed.push((idx, c));
            }
        }
        if indexed.is_empty() {
            return Err(Error::EmptyInput);
        }
        indexed.sort_unstable();
        Ok(ToneAlphabet::Pitch {
            letters: indexed.into_iter().map(|(_, c)| c).collect(),
        })
    }

    /// Interval alphabet covering every step in `-bound..=bound`.
    pub fn interval(bound: i16) -> Result<Self> {
        if bound < 0 {
            return Err(Error::Config(format!("negative interval bound {bound}")));
        }
        Ok(ToneAlphabet::Interval { bound })
    }

    /// Number of tone symbols (end-of-segment marker excluded).
    pub fn size(&self) -> usize {
        match self {
            ToneAlphabet::Pitch { letters } => letters.len(),
            ToneAlphabet::Interval { bound } => 2 * (*bound as usize) + 1,
        }
    }

    /// Id of the end-of-segment marker.
    pub fn end_id(&self) -> ToneId {
        self.size() as ToneId
    }

    /// Dense id of a tone, if it is a member.
    pub fn encode(&self, tone: &Tone) -> Option<ToneId> {
        match (self, tone) {
            (ToneAlphabet::Pitch { letters }, Tone::Pitch(c)) => letters
                .iter()
                .position(|x| x == c)
                .map(|i| i as ToneId),
            (ToneAlphabet::Interval { bound }, Tone::Interval(d)) => {
                if d.abs() <= *bound {
                    Some((d + bound) as ToneId)
                } else {
                    None
                }
            }
            _ => None,
        }
    }

    /// The tone carried by a dense id, if the id is in range.
    pub fn decode(&self, id: ToneId) -> Option<Tone> {
        match self {
            ToneAlphabet::Pitch { letters } => letters.get(id as usize).copied().map(Tone::Pitch),
            ToneAlphabet::Interval { bound } => {
                if (id as usize) < self.size() {
                    Some(Tone::Interval(id as i16 - bound))
                } else {
                    None
                }
            }
        }
    }

    /// Encodes a full tone sequence, failing on the first foreign tone.
    pub fn encode_seq(&self, tones: &[Tone]) -> Result<Vec<ToneId>> {
        tones
            .iter()
            .map(|t| {
                self.encode(t)
                    .ok_or_else(|| Error::UnknownTone(t.to_string()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamut_skips_i_and_ascends_by_step() {
        assert_eq!(gamut_index('9'), Some(0));
        assert_eq!(gamut_index('a'), Some(1));
        assert_eq!(gamut_index('h'), Some(8));
        assert_eq!(gamut_index('j'), Some(9));
        assert_eq!(gamut_index('s'), Some(18));
        assert_eq!(gamut_index('i'), None);
        assert_eq!(gamut_index('t'), None);
    }

    #[test]
    fn pitch_alphabet_sorts_and_dedups() {
        let a = ToneAlphabet::from_pitch_letters("kgk9g".chars()).unwrap();
        match &a {
            ToneAlphabet::Pitch { letters } => assert_eq!(letters, &vec!['9', 'g', 'k']),
            _ => panic!(),
        }
        assert_eq!(a.size(), 3);
        assert_eq!(a.end_id(), 3);
        assert_eq!(a.encode(&Tone::Pitch('g')), Some(1));
        assert_eq!(a.encode(&Tone::Pitch('z')), None);
        assert_eq!(a.decode(1), Some(Tone::Pitch('g')));
        assert_eq!(a.decode(3), None);
    }

    #[test]
    fn interval_alphabet_covers_symmetric_range() {
        let a = ToneAlphabet::interval(2).unwrap();
        assert_eq!(a.size(), 5);
        assert_eq!(a.encode(&Tone::Interval(-2)), Some(0));
        assert_eq!(a.encode(&Tone::Interval(0)), Some(2));
        assert_eq!(a.encode(&Tone::Interval(2)), Some(4));
        assert_eq!(a.encode(&Tone::Interval(3)), None);
        assert_eq!(a.decode(0), Some(Tone::Interval(-2)));
    }

    #[test]
    fn tone_round_trips_through_strings() {
        for t in [Tone::Pitch('k'), Tone::Interval(-5), Tone::Interval(0)] {
            let s = t.to_string();
            assert_eq!(s.parse::<Tone>().unwrap(), t);
        }
        assert!("xx".parse::<Tone>().is_err());
    }
}
