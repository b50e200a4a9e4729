//! Bag-of-segments features, TF-IDF weighting, and a linear max-margin
//! mode classifier.
//!
//! Segments are keyed by their tone ids joined with '-'. A vocabulary
//! keeps the 5000 most frequent training segments (ties broken
//! lexicographically on the key) together with document frequencies;
//! chants become sparse TF-IDF vectors, L2-normalized unless empty.
//! Classification is one-vs-rest L2-regularized hinge loss, optimized by
//! dual coordinate descent with a bias feature appended to every vector.

use crate::error::{Error, Result};
use crate::tone::ToneId;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Vocabulary size cap.
pub const VOCAB_CAP: usize = 5000;

/// Canonical string key for a segment: decimal tone ids joined by '-'.
pub fn segment_key(tones: &[ToneId]) -> String {
    let parts: Vec<String> = tones.iter().map(|t| t.to_string()).collect();
    parts.join("-")
}

/// Bag of every contiguous subsequence of length 1..=max_n, with
/// multiplicity, as segment keys.
pub fn ngram_bag(tones: &[ToneId], max_n: usize) -> Vec<String> {
    let mut bag = Vec::new();
    for start in 0..tones.len() {
        for len in 1..=max_n.min(tones.len() - start) {
            bag.push(segment_key(&tones[start..start + len]));
        }
    }
    bag
}

/// Frequency-ranked segment vocabulary with document frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentVocabulary {
    entries: Vec<String>,
    doc_freq: Vec<u64>,
    n_docs: u64,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

/// Sparse non-negative feature vector over vocabulary indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    pub weights: BTreeMap<usize, f64>,
}

impl FeatureVector {
    pub fn is_zero(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn l2_norm(&self) -> f64 {
        self.weights.values().map(|w| w * w).sum::<f64>().sqrt()
    }
}

/// Builds the vocabulary from training documents (each a bag of segment
/// keys with multiplicity): top entries by raw count, at most the cap,
/// ties broken lexicographically.
pub fn build_vocabulary(docs: &[Vec<String>]) -> Result<SegmentVocabulary> {
    if docs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    let mut doc_freq: BTreeMap<&str, u64> = BTreeMap::new();
    for doc in docs {
        let mut seen: BTreeMap<&str, ()> = BTreeMap::new();
        for key in doc {
            *counts.entry(key).or_default() += 1;
            seen.entry(key).or_insert(());
        }
        for (key, ()) in seen {
            *doc_freq.entry(key).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    // Descending count, then ascending key; BTreeMap iteration already
    // yields ascending keys, and the sort is stable.
    ranked.sort_by(|a, b| b.1.cmp(&a.1));
    ranked.truncate(VOCAB_CAP);
    let entries: Vec<String> = ranked.iter().map(|(k, _)| k.to_string()).collect();
    let freqs: Vec<u64> = ranked.iter().map(|(k, _)| doc_freq[k]).collect();
    let index = entries
        .iter()
        .enumerate()
        .map(|(i, k)| (k.clone(), i))
        .collect();
    Ok(SegmentVocabulary {
        entries,
        doc_freq: freqs,
        n_docs: docs.len() as u64,
        index,
    })
}

impl SegmentVocabulary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn index_of(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    /// Rebuilds the lookup index after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i))
            .collect();
    }

    /// Smoothed inverse document frequency of entry i:
    /// ln((1 + N) / (1 + df)) + 1.
    pub fn idf(&self, i: usize) -> f64 {
        ((1.0 + self.n_docs as f64) / (1.0 + self.doc_freq[i] as f64)).ln() + 1.0
    }

    /// Raw TF-IDF weights (no normalization); out-of-vocabulary keys
    /// contribute nothing.
    pub fn tf_idf_raw(&self, doc: &[String]) -> FeatureVector {
        let mut tf: BTreeMap<usize, u64> = BTreeMap::new();
        for key in doc {
            if let Some(i) = self.index_of(key) {
                *tf.entry(i).or_default() += 1;
            }
        }
        FeatureVector {
            weights: tf
                .into_iter()
                .map(|(i, c)| (i, c as f64 * self.idf(i)))
                .collect(),
        }
    }

    /// TF-IDF then L2 normalization; an all-out-of-vocabulary document
    /// yields the zero vector unchanged.
    pub fn vectorize(&self, doc: &[String]) -> FeatureVector {
        let mut v = self.tf_idf_raw(doc);
        let norm = v.l2_norm();
        if norm > 0.0 {
            for w in v.weights.values_mut() {
                *w /= norm;
            }
        }
        v
    }
}

/// One-vs-rest linear classifier; weight vectors carry the bias as a
/// final augmented component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    classes: Vec<u8>,
    /// Per class, vocabulary-dimension weights followed by the bias.
    weights: Vec<Vec<f64>>,
    dim: usize,
}

const SVM_TOL: f64 = 1e-4;
const SVM_MAX_PASSES: usize = 1000;

/// Dual coordinate descent for an L2-regularized hinge-loss binary SVM
/// over sparse vectors augmented with a constant bias feature. Returns
/// dense weights of length dim + 1.
fn train_binary(
    vectors: &[FeatureVector],
    ys: &[f64],
    dim: usize,
    c: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let n = vectors.len();
    let mut w = vec![0.0; dim + 1];
    let mut alpha = vec![0.0; n];
    // Squared norms of augmented vectors.
    let q: Vec<f64> = vectors
        .iter()
        .map(|v| v.weights.values().map(|x| x * x).sum::<f64>() + 1.0)
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..SVM_MAX_PASSES {
        order.shuffle(rng);
        let mut max_violation = 0.0f64;
        for &i in &order {
            let xi = &vectors[i];
            let mut score = w[dim];
            for (&j, &x) in &xi.weights {
                score += w[j] * x;
            }
            let g = ys[i] * score - 1.0;
            // Projected gradient respecting the box [0, C].
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            max_violation = max_violation.max(pg.abs());
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / q[i]).clamp(0.0, c);
                let delta = (alpha[i] - old) * ys[i];
                if delta != 0.0 {
                    for (&j, &x) in &xi.weights {
                        w[j] += delta * x;
                    }
                    w[dim] += delta;
                }
            }
        }
        if max_violation < SVM_TOL {
            break;
        }
    }
    w
}

/// Trains the one-vs-rest classifier. A single-class training set yields
/// a constant predictor for that class.
pub fn train_classifier(
    vectors: &[FeatureVector],
    labels: &[u8],
    dim: usize,
    c: f64,
    seed: u64,
) -> Result<LinearClassifier> {
    if vectors.is_empty() || vectors.len() != labels.len() {
        return Err(Error::EmptyInput);
    }
    let mut classes: Vec<u8> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() == 1 {
        return Ok(LinearClassifier {
            classes,
            weights: Vec::new(),
            dim,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::with_capacity(classes.len());
    for &class in &classes {
        let ys: Vec<f64> = labels
            .iter()
            .map(|&l| if l == class { 1.0 } else { -1.0 })
            .collect();
        weights.push(train_binary(vectors, &ys, dim, c, &mut rng));
    }
    Ok(LinearClassifier {
        classes,
        weights,
        dim,
    })
}

impl LinearClassifier {
    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Per-class decision scores for one vector.
    pub fn decision_scores(&self, v: &FeatureVector) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| {
                let mut s = w[self.dim];
                for (&j, &x) in &v.weights {
                    s += w[j] * x;
                }
                s
            })
            .collect()
    }

    /// Predicted class: highest decision score, lowest class on ties;
    /// a constant predictor always returns its single class.
    pub fn predict(&self, v: &FeatureVector) -> u8 {
        if self.weights.is_empty() {
            return self.classes[0];
        }
        let scores = self.decision_scores(v);
        let mut best = 0;
        for i in 1..scores.len() {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        self.classes[best]
    }

    pub fn predict_all(&self, vs: &[FeatureVector]) -> Vec<u8> {
        vs.iter().map(|v| self.predict(v)).collect()
    }
}

/// Micro-averaged F1 over single-label multiclass predictions; equal to
/// accuracy in this setting.
pub fn micro_f1(predictions: &[u8], gold: &[u8]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != gold.len() {
        return Err(Error::EmptyInput);
    }
    let correct = predictions
        .iter()
        .zip(gold)
        .filter(|(p, g)| p == g)
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}
