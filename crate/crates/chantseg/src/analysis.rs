//! Positional curves and the perplexity-accuracy correlation.
//!
//! The positional curves place every tone at a relative position
//! i/(n-1) within its chant (0 for one-tone chants), bin [0,1] into B
//! equal bins, and average a per-tone value inside each bin: either the
//! length of the segment the tone sits in, or how exclusively that
//! segment type belongs to a single mode.

use crate::error::{Error, Result};
use crate::nhpylm::Segmentation;
use crate::tone::ToneId;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;

/// Default bin count for positional curves.
pub const DEFAULT_BINS: usize = 50;

/// What a curve's per-bin means measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurveKind {
    SegmentLength,
    ModalUniqueness,
}

/// How segment-to-mode exclusivity is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UniquenessMetric {
    /// Share of the segment type's occurrences in its most common mode;
    /// ranges over [1/8, 1] with eight modes.
    #[default]
    MaxShare,
    /// 1 - H(mode distribution)/ln(8); ranges over [0, 1].
    Entropy,
}

/// Binned per-position averages over [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionalCurve {
    pub kind: CurveKind,
    sums: Vec<f64>,
    counts: Vec<u64>,
}

impl PositionalCurve {
    fn new(kind: CurveKind, bins: usize) -> Self {
        PositionalCurve {
            kind,
            sums: vec![0.0; bins],
            counts: vec![0; bins],
        }
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    /// Mean value in bin b, when the bin has samples.
    pub fn mean(&self, b: usize) -> Option<f64> {
        (self.counts[b] > 0).then(|| self.sums[b] / self.counts[b] as f64)
    }

    pub fn count(&self, b: usize) -> u64 {
        self.counts[b]
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Midpoint of bin b.
    pub fn bin_center(&self, b: usize) -> f64 {
        (b as f64 + 0.5) / self.bins() as f64
    }

    fn add(&mut self, rel: f64, value: f64) {
        let b = bin_of(rel, self.bins());
        self.sums[b] += value;
        self.counts[b] += 1;
    }
}

/// Bin index of a relative position in [0, 1]; 1.0 lands in the last bin.
fn bin_of(rel: f64, bins: usize) -> usize {
    ((rel * bins as f64) as usize).min(bins - 1)
}

/// Relative position of tone i in a chant of n tones.
fn relative_position(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        i as f64 / (n - 1) as f64
    }
}

/// Per-tone value iteration: calls f(tone index, chant length, segment
/// index) for every tone of every chant.
fn for_each_tone(
    segmentations: &[Segmentation],
    mut f: impl FnMut(usize, usize, usize, usize),
) {
    for (ci, seg) in segmentations.iter().enumerate() {
        let n: usize = seg.lengths.iter().sum();
        let mut i = 0;
        for (si, &len) in seg.lengths.iter().enumerate() {
            for _ in 0..len {
                f(ci, i, n, si);
                i += 1;
            }
        }
    }
}

/// Average length of the segment each tone participates in, by relative
/// position.
pub fn positional_segment_length(
    segmentations: &[Segmentation],
    bins: usize,
) -> Result<PositionalCurve> {
    if segmentations.is_empty() || bins == 0 {
        return Err(Error::EmptyInput);
    }
    let mut curve = PositionalCurve::new(CurveKind::SegmentLength, bins);
    for_each_tone(segmentations, |ci, i, n, si| {
        let len = segmentations[ci].lengths[si] as f64;
        curve.add(relative_position(i, n), len);
    });
    Ok(curve)
}

/// How exclusively each tone's segment type belongs to one mode, by
/// relative position. Type statistics come from the given corpus itself.
pub fn modal_uniqueness(
    chants: &[Vec<ToneId>],
    modes: &[u8],
    segmentations: &[Segmentation],
    bins: usize,
    metric: UniquenessMetric,
) -> Result<PositionalCurve> {
    if chants.is_empty() || bins == 0 {
        return Err(Error::EmptyInput);
    }
    if chants.len() != modes.len() || chants.len() != segmentations.len() {
        return Err(Error::Data(
            "chants, modes, and segmentations must be parallel".into(),
        ));
    }
    // Occurrence counts of each segment type per mode.
    let mut per_mode: BTreeMap<Vec<ToneId>, BTreeMap<u8, u64>> = BTreeMap::new();
    for ((tones, seg), &mode) in chants.iter().zip(segmentations).zip(modes) {
        for piece in seg.segments(tones) {
            *per_mode
                .entry(piece.to_vec())
                .or_default()
                .entry(mode)
                .or_default() += 1;
        }
    }
    let uniqueness: BTreeMap<&Vec<ToneId>, f64> = per_mode
        .iter()
        .map(|(k, by_mode)| {
            let total: u64 = by_mode.values().sum();
            let value = match metric {
                UniquenessMetric::MaxShare => {
                    *by_mode.values().max().unwrap() as f64 / total as f64
                }
                UniquenessMetric::Entropy => {
                    let h: f64 = by_mode
                        .values()
                        .map(|&c| {
                            let p = c as f64 / total as f64;
                            -p * p.ln()
                        })
                        .sum();
                    1.0 - h / (crate::ensemble::MODE_COUNT as f64).ln()
                }
            };
            (k, value)
        })
        .collect();

    let mut curve = PositionalCurve::new(CurveKind::ModalUniqueness, bins);
    for (tones, seg) in chants.iter().zip(segmentations) {
        let n = tones.len();
        let mut i = 0;
        for piece in seg.segments(tones) {
            let value = uniqueness[&piece.to_vec()];
            for _ in 0..piece.len() {
                curve.add(relative_position(i, n), value);
                i += 1;
            }
        }
    }
    Ok(curve)
}

/// Standard Pearson correlation coefficient of two paired series.
pub fn correlate_perplexity_f1(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::Data(
            "correlation needs at least 3 paired values".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Writes a curve as CSV rows (bin_center, mean, count); empty bins get
/// an empty mean field.
pub fn write_curve_csv<W: Write>(out: &mut W, curve: &PositionalCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_center", "mean", "count"])?;
    for b in 0..curve.bins() {
        let mean = curve
            .mean(b)
            .map(|m| format!("{m}"))
            .unwrap_or_default();
        w.write_record([
            format!("{}", curve.bin_center(b)),
            mean,
            format!("{}", curve.count(b)),
        ])?;
    }
    w.flush()?;
    Ok(())
}
