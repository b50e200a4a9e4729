//! Baseline segmenters and the classical feature set.
//!
//! Three segmentation baselines: fixed-length chunks (4-grams),
//! syllable units, and word units from the corpus annotations. The
//! classical mode classifier uses hand-picked features (initial and
//! final pitch plus melody range) instead of learned segments.

use crate::corpus::{Chant, Encoding};
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::nhpylm::Segmentation;
use crate::tone::{gamut_index, Tone, PITCH_GAMUT};

/// The comparison systems from the evaluation tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Ngram4,
    Syllables,
    Words,
    Classical,
}

/// Annotation level used by [`unit_segment`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitKind {
    Syllable,
    Word,
}

/// Consecutive non-overlapping chunks of length `n`, left to right; a
/// final remainder shorter than `n` is kept as its own segment.
pub fn ngram_segment(tone_count: usize, n: usize) -> Result<Segmentation> {
    if tone_count == 0 {
        return Err(Error::EmptyInput);
    }
    if n == 0 {
        return Err(Error::Config("n-gram length must be positive".into()));
    }
    let mut lengths = vec![n; tone_count / n];
    if tone_count % n != 0 {
        lengths.push(tone_count % n);
    }
    Ok(Segmentation { lengths })
}

/// Cuts exactly at the chant's recorded syllable or word boundaries.
pub fn unit_segment(chant: &Chant, unit: UnitKind) -> Result<Segmentation> {
    let (cuts, name) = match unit {
        UnitKind::Syllable => (&chant.syllable_boundaries, "syllable"),
        UnitKind::Word => (&chant.word_boundaries, "word"),
    };
    let cuts = cuts.as_ref().ok_or_else(|| Error::MissingBoundaries {
        record_id: chant.record_id.clone(),
        unit: name.to_string(),
    })?;
    let mut lengths = Vec::with_capacity(cuts.len() + 1);
    let mut prev = 0;
    for &cut in cuts {
        lengths.push(cut - prev);
        prev = cut;
    }
    lengths.push(chant.tones.len() - prev);
    Ok(Segmentation { lengths })
}

/// Dimension of the classical feature vector: one-hot initial pitch,
/// one-hot final pitch, low index, high index, range.
pub const CLASSICAL_DIM: usize = 2 * PITCH_GAMUT.len() + 3;

/// Hand-picked mode features: one-hot initial and final pitch over the
/// gamut, lowest and highest gamut index, and range (high minus low).
/// Defined for pitch encoding only.
pub fn classical_features(chant: &Chant) -> Result<FeatureVector> {
    if chant.encoding != Encoding::Pitch {
        return Err(Error::NotApplicable(
            "classical features need pitch encoding".into(),
        ));
    }
    let indices: Vec<i16> = chant
        .tones
        .iter()
        .map(|t| match t {
            Tone::Pitch(c) => {
                gamut_index(*c).ok_or_else(|| Error::UnknownTone(c.to_string()))
            }
            Tone::Interval(d) => Err(Error::UnknownTone(d.to_string())),
        })
        .collect::<Result<_>>()?;
    if indices.is_empty() {
        return Err(Error::EmptyInput);
    }
    let g = PITCH_GAMUT.len();
    let low = *indices.iter().min().unwrap();
    let high = *indices.iter().max().unwrap();
    let mut v = FeatureVector::default();
    v.weights.insert(indices[0] as usize, 1.0);
    v.weights.insert(g + indices[indices.len() - 1] as usize, 1.0);
    v.weights.insert(2 * g, low as f64);
    v.weights.insert(2 * g + 1, high as f64);
    v.weights.insert(2 * g + 2, (high - low) as f64);
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Genre;

    fn pitch_chant(letters: &str) -> Chant {
        Chant {
            record_id: "t1".into(),
            cantus_id: "c1".into(),
            source_id: "s1".into(),
            genre: Genre::Antiphon,
            mode: 1,
            encoding: Encoding::Pitch,
            tones: letters.chars().map(Tone::Pitch).collect(),
            syllable_boundaries: None,
            word_boundaries: None,
        }
    }

    #[test]
    fn ngram_chunking_with_remainder() {
        assert_eq!(ngram_segment(8, 4).unwrap().lengths, vec![4, 4]);
        assert_eq!(ngram_segment(9, 4).unwrap().lengths, vec![4, 4, 1]);
        assert_eq!(ngram_segment(3, 4).unwrap().lengths, vec![3]);
        assert!(matches!(ngram_segment(0, 4), Err(Error::EmptyInput)));
        assert!(matches!(ngram_segment(5, 0), Err(Error::Config(_))));
    }

    #[test]
    fn ngram_segments_cover_the_chant() {
        for count in 1..40 {
            let seg = ngram_segment(count, 4).unwrap();
            assert_eq!(seg.lengths.iter().sum::<usize>(), count);
            for (i, &len) in seg.lengths.iter().enumerate() {
                if i + 1 < seg.lengths.len() {
                    assert_eq!(len, 4);
                } else {
                    assert!(len <= 4 && len >= 1);
                }
            }
        }
    }

    #[test]
    fn unit_segments_follow_annotations() {
        let mut chant = pitch_chant("fgh");
        chant.syllable_boundaries = Some(vec![2]);
        let seg = unit_segment(&chant, UnitKind::Syllable).unwrap();
        assert_eq!(seg.lengths, vec![2, 1]);
        assert_eq!(seg.cut_positions(), vec![2]);

        chant.word_boundaries = Some(vec![]);
        let whole = unit_segment(&chant, UnitKind::Word).unwrap();
        assert_eq!(whole.lengths, vec![3]);
    }

    #[test]
    fn missing_annotations_are_an_error() {
        let chant = pitch_chant("fg");
        let err = unit_segment(&chant, UnitKind::Word).unwrap_err();
        match err {
            Error::MissingBoundaries { record_id, unit } => {
                assert_eq!(record_id, "t1");
                assert_eq!(unit, "word");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn classical_features_encode_ends_and_range() {
        // f=6, g=7, h=8 in the gamut.
        let v = classical_features(&pitch_chant("fgh")).unwrap();
        let g = PITCH_GAMUT.len();
        assert_eq!(v.weights[&6], 1.0);
        assert_eq!(v.weights[&(g + 8)], 1.0);
        assert_eq!(v.weights[&(2 * g)], 6.0);
        assert_eq!(v.weights[&(2 * g + 1)], 8.0);
        assert_eq!(v.weights[&(2 * g + 2)], 2.0);
        assert_eq!(v.weights.len(), 5);
    }

    #[test]
    fn one_tone_chant_has_zero_range() {
        let v = classical_features(&pitch_chant("f")).unwrap();
        let g = PITCH_GAMUT.len();
        assert_eq!(v.weights[&6], 1.0);
        assert_eq!(v.weights[&(g + 6)], 1.0);
        assert_eq!(v.weights[&(2 * g + 2)], 0.0);
    }

    #[test]
    fn interval_chants_are_not_applicable() {
        let mut chant = pitch_chant("fg");
        chant.encoding = Encoding::Interval;
        chant.tones = vec![Tone::Interval(1)];
        assert!(matches!(
            classical_features(&chant),
            Err(Error::NotApplicable(_))
        ));
    }
}
