//! Blocked Gibbs training and exact lattice inference for the nested
//! segmentation model.
//!
//! A chant's segmentation posterior factorizes over a semi-Markov
//! lattice whose states are (tones consumed, length of the segment
//! ending there); the segment model is bigram, so transitions depend on
//! the previous span's identity. Forward filtering plus backward
//! sampling draws exact posterior segmentations; max-product over the
//! same lattice gives the Viterbi decode. Training removes one chant's
//! customers, resamples its segmentation, re-adds it, and after each
//! sweep resamples the tree hyperparameters and the length parameter.
//!
//! Viterbi tie-breaking: among maximal-score paths, fewer segments win,
//! then the lexicographically earliest cut pattern. Path scores are
//! compared bit-for-bit, summed tail-first so equal-score paths produce
//! identical floats regardless of where they branch.

use crate::error::{Error, Result};
use crate::nhpylm::{NhpylmModel, SegmentRef, SegmentTrace, Segmentation, BOM, EOM, UNKNOWN_SEGMENT};
use crate::pyp::Sym;
use crate::tone::ToneId;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Training loop knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_sweeps: usize,
    /// Sweeps without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Hyperparameter resampling cadence, in sweeps.
    pub resample_every: usize,
    /// Validation evaluation cadence, in sweeps.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_sweeps: 100,
            patience: 10,
            seed: 0,
            resample_every: 1,
            eval_every: 1,
        }
    }
}

/// The model plus every training chant's current segmentation and the
/// traces needed to withdraw it.
pub struct TrainerState {
    pub model: NhpylmModel,
    pub segmentations: Vec<Segmentation>,
    traces: Vec<Vec<SegmentTrace>>,
    pub sweep: usize,
}

/// One row of the training history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRecord {
    pub sweep: usize,
    pub train_perplexity: f64,
    pub validation_perplexity: f64,
    pub lambda: f64,
    /// Per-depth (discount, concentration) of the segment tree.
    pub segment_params: Vec<(f64, f64)>,
    /// Per-depth (discount, concentration) of the tone tree.
    pub tone_params: Vec<(f64, f64)>,
}

/// Result of a training run: the best-validation model and diagnostics.
pub struct TrainOutcome {
    pub model: NhpylmModel,
    pub history: Vec<SweepRecord>,
    pub best_validation: f64,
    pub best_sweep: usize,
    /// True when patience stopped the run; false when max_sweeps ran out
    /// (the best state is returned either way).
    pub converged: bool,
}

// --- Lattice scoring ----------------------------------------------------

/// Per-chant cache of span base probabilities, dish ids, and context
/// ids, so lattice transitions cost one tree lookup each. Base values
/// are computed with the same operation order as segment_base_prob, so
/// scores derived from the cache match it bit-for-bit.
struct SpanCache {
    n: usize,
    l: usize,
    base: Vec<f64>,
    dish: Vec<Option<Sym>>,
    ctx: Vec<Sym>,
}

impl SpanCache {
    fn build(model: &NhpylmModel, tones: &[ToneId]) -> Self {
        let n = tones.len();
        let l = model.max_segment_len().min(n);
        let mut base = vec![0.0; n * l];
        let mut dish = vec![None; n * l];
        let mut ctx = vec![UNKNOWN_SEGMENT; n * l];
        let correction: Vec<f64> = (1..=l).map(|k| model.length_correction(k)).collect();
        let eos = model.eos();
        for start in 0..n {
            let mut raw = 1.0;
            for len in 1..=l.min(n - start) {
                let end = start + len;
                raw *= model.tone_prob(tones[end - 1], &tones[start..end - 1]);
                let with_eos = raw * model.tone_prob(eos, &tones[start..end]);
                let idx = start * l + (len - 1);
                base[idx] = with_eos * correction[len - 1];
                dish[idx] = model.interner().lookup(&tones[start..end]);
                ctx[idx] = dish[idx].unwrap_or(UNKNOWN_SEGMENT);
            }
        }
        SpanCache { n, l, base, dish, ctx }
    }

    fn idx(&self, start: usize, len: usize) -> usize {
        debug_assert!(len >= 1 && start + len <= self.n);
        start * self.l + (len - 1)
    }

    /// Context symbol of the segment of length `prev_len` ending at `t`
    /// (0 means begin-of-melody).
    fn prev_ctx(&self, t: usize, prev_len: usize) -> Sym {
        if prev_len == 0 {
            debug_assert_eq!(t, 0);
            BOM
        } else {
            self.ctx[self.idx(t - prev_len, prev_len)]
        }
    }

    /// Log probability of the span (start, len) given the segment of
    /// length `prev_len` ending at `start`.
    fn span_log_prob(&self, model: &NhpylmModel, start: usize, len: usize, prev_len: usize) -> f64 {
        let idx = self.idx(start, len);
        model
            .segment_prob_with_base(self.prev_ctx(start, prev_len), self.dish[idx], self.base[idx])
            .ln()
    }

    /// Log probability of end-of-melody after the segment of length
    /// `prev_len` ending at the chant end.
    fn eom_log_prob(&self, model: &NhpylmModel, prev_len: usize) -> f64 {
        model
            .segment_prob_with_base(
                self.prev_ctx(self.n, prev_len),
                Some(EOM),
                model.eos_unigram_prob(),
            )
            .ln()
    }
}

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Forward pass: alpha[(t-1)*l + k-1] = log mass of all segmentations of
/// the first t tones whose last segment has length k.
fn forward(model: &NhpylmModel, cache: &SpanCache) -> Vec<f64> {
    let (n, l) = (cache.n, cache.l);
    let mut alpha = vec![f64::NEG_INFINITY; n * l];
    let mut scratch = Vec::with_capacity(l);
    for t in 1..=n {
        for k in 1..=l.min(t) {
            let start = t - k;
            let a = if start == 0 {
                cache.span_log_prob(model, 0, k, 0)
            } else {
                scratch.clear();
                for j in 1..=l.min(start) {
                    scratch.push(
                        alpha[(start - 1) * l + (j - 1)]
                            + cache.span_log_prob(model, start, k, j),
                    );
                }
                logsumexp(&scratch)
            };
            alpha[(t - 1) * l + (k - 1)] = a;
        }
    }
    alpha
}

/// Total log mass of all segmentations of the chant (end-of-melody
/// included), from a forward pass.
pub fn chant_log_mass(model: &NhpylmModel, tones: &[ToneId]) -> f64 {
    let cache = SpanCache::build(model, tones);
    let alpha = forward(model, &cache);
    let (n, l) = (cache.n, cache.l);
    let terms: Vec<f64> = (1..=l.min(n))
        .map(|k| alpha[(n - 1) * l + (k - 1)] + cache.eom_log_prob(model, k))
        .collect();
    logsumexp(&terms)
}

/// Draws an exact posterior sample of the chant's segmentation.
pub fn sample_segmentation(
    model: &NhpylmModel,
    tones: &[ToneId],
    rng: &mut impl Rng,
) -> Segmentation {
    let cache = SpanCache::build(model, tones);
    let alpha = forward(model, &cache);
    let (n, l) = (cache.n, cache.l);

    // Gumbel-free categorical draw over log weights.
    fn draw(log_weights: &[f64], rng: &mut impl Rng) -> usize {
        let total = logsumexp(log_weights);
        let mut u: f64 = rng.gen::<f64>();
        for (i, lw) in log_weights.iter().enumerate() {
            let p = (lw - total).exp();
            if u < p {
                return i;
            }
            u -= p;
        }
        log_weights.len() - 1
    }

    let final_weights: Vec<f64> = (1..=l.min(n))
        .map(|k| alpha[(n - 1) * l + (k - 1)] + cache.eom_log_prob(model, k))
        .collect();
    let mut k = draw(&final_weights, rng) + 1;
    let mut t = n;
    let mut lengths_rev = vec![k];
    while t - k > 0 {
        let start = t - k;
        let weights: Vec<f64> = (1..=l.min(start))
            .map(|j| alpha[(start - 1) * l + (j - 1)] + cache.span_log_prob(model, start, k, j))
            .collect();
        let j = draw(&weights, rng) + 1;
        lengths_rev.push(j);
        t = start;
        k = j;
    }
    lengths_rev.reverse();
    Segmentation { lengths: lengths_rev }
}

/// Most probable segmentation; ties broken toward fewer segments, then
/// the lexicographically earliest cut pattern.
pub fn viterbi_segment(model: &NhpylmModel, tones: &[ToneId]) -> Segmentation {
    let cache = SpanCache::build(model, tones);
    let (n, l) = (cache.n, cache.l);
    // gamma[t][j]: best completion score from position t when the
    // previous segment has length j (j = 0 only for t = 0); summed
    // tail-first so branch-equal paths compare bit-identically.
    // nseg[t][j]: fewest remaining segments among score-optimal
    // completions.
    let width = l + 1;
    let mut gamma = vec![f64::NEG_INFINITY; (n + 1) * width];
    let mut nseg = vec![u32::MAX; (n + 1) * width];
    for j in 1..=l.min(n).max(0) {
        if j <= n {
            gamma[n * width + j] = cache.eom_log_prob(model, j);
            nseg[n * width + j] = 0;
        }
    }
    for t in (0..n).rev() {
        let js: &[usize] = if t == 0 { &[0] } else { &[] };
        let j_range: Vec<usize> = if t == 0 {
            js.to_vec()
        } else {
            (1..=l.min(t)).collect()
        };
        for &j in &j_range {
            let mut best = f64::NEG_INFINITY;
            let mut best_nseg = u32::MAX;
            for k in 1..=l.min(n - t) {
                let tail = gamma[(t + k) * width + k];
                if tail == f64::NEG_INFINITY {
                    continue;
                }
                let score = cache.span_log_prob(model, t, k, j) + tail;
                let count = 1 + nseg[(t + k) * width + k];
                if score > best || (score == best && count < best_nseg) {
                    best = score;
                    best_nseg = count;
                }
            }
            gamma[t * width + j] = best;
            nseg[t * width + j] = best_nseg;
        }
    }

    // Greedy reconstruction: the smallest k preserving both the optimal
    // score and the minimal segment count yields the earliest cuts.
    let mut lengths = Vec::new();
    let mut t = 0usize;
    let mut j = 0usize;
    while t < n {
        let target = gamma[t * width + j];
        let target_nseg = nseg[t * width + j];
        let mut chosen = None;
        for k in 1..=l.min(n - t) {
            let tail = gamma[(t + k) * width + k];
            if tail == f64::NEG_INFINITY {
                continue;
            }
            let score = cache.span_log_prob(model, t, k, j) + tail;
            if score == target && 1 + nseg[(t + k) * width + k] == target_nseg {
                chosen = Some(k);
                break;
            }
        }
        let k = chosen.expect("an optimal continuation exists at every lattice node");
        lengths.push(k);
        t += k;
        j = k;
    }
    Segmentation { lengths }
}

// --- Perplexity ---------------------------------------------------------

/// Perplexity from a summed natural-log probability over `events` steps:
/// 2 to the negative mean log2.
pub fn perplexity_from_nats(total_ln: f64, events: u64) -> f64 {
    assert!(events > 0);
    (-(total_ln / std::f64::consts::LN_2) / events as f64).exp2()
}

/// Corpus perplexity over all segment and end-of-melody events of the
/// given segmentations, scored left to right under the frozen model.
pub fn perplexity(
    model: &NhpylmModel,
    chants: &[Vec<ToneId>],
    segmentations: &[Segmentation],
) -> Result<f64> {
    if chants.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut total_ln = 0.0;
    let mut events = 0u64;
    for (tones, seg) in chants.iter().zip(segmentations) {
        total_ln += model.segmentation_log_prob(tones, seg)?;
        events += seg.lengths.len() as u64 + 1;
    }
    Ok(perplexity_from_nats(total_ln, events))
}

/// Viterbi-decodes every chant on the frozen model, in parallel.
pub fn viterbi_corpus(model: &NhpylmModel, chants: &[Vec<ToneId>]) -> Vec<Segmentation> {
    chants
        .par_iter()
        .map(|tones| viterbi_segment(model, tones))
        .collect()
}

/// Held-out perplexity: Viterbi segmentations scored on the frozen model.
pub fn heldout_perplexity(model: &NhpylmModel, chants: &[Vec<ToneId>]) -> Result<f64> {
    let segs = viterbi_corpus(model, chants);
    perplexity(model, chants, &segs)
}

// --- Training -----------------------------------------------------------

/// Segments a chant by i.i.d. fair cut decisions, forcing a cut whenever
/// a segment reaches the length cap.
fn random_segmentation(n: usize, cap: usize, rng: &mut impl Rng) -> Segmentation {
    let mut lengths = Vec::new();
    let mut run = 0usize;
    for i in 0..n {
        run += 1;
        let last = i == n - 1;
        if last || run == cap || rng.gen::<bool>() {
            lengths.push(run);
            run = 0;
        }
    }
    Segmentation { lengths }
}

/// Registers one chant's segmentation as customers; returns the traces.
fn add_chant(
    model: &mut NhpylmModel,
    tones: &[ToneId],
    seg: &Segmentation,
    rng: &mut impl Rng,
) -> Result<Vec<SegmentTrace>> {
    let mut traces = Vec::with_capacity(seg.lengths.len() + 1);
    let mut prev = BOM;
    let mut start = 0usize;
    for &len in &seg.lengths {
        let slice = &tones[start..start + len];
        traces.push(model.add_segment(prev, SegmentRef::Tones(slice), rng)?);
        prev = model.context_of(slice);
        start += len;
    }
    traces.push(model.add_segment(prev, SegmentRef::Eom, rng)?);
    Ok(traces)
}

/// Initializes training state with random segmentations, all registered
/// in the model.
pub fn init_random(
    chants: &[Vec<ToneId>],
    mut model: NhpylmModel,
    rng: &mut impl Rng,
) -> Result<TrainerState> {
    let cap = model.max_segment_len();
    let mut segmentations = Vec::with_capacity(chants.len());
    let mut traces = Vec::with_capacity(chants.len());
    for tones in chants {
        let seg = random_segmentation(tones.len(), cap, rng);
        traces.push(add_chant(&mut model, tones, &seg, rng)?);
        segmentations.push(seg);
    }
    Ok(TrainerState {
        model,
        segmentations,
        traces,
        sweep: 0,
    })
}

/// One blocked Gibbs sweep: per chant (random order), withdraw its
/// customers, resample its segmentation exactly, re-add; then resample
/// tree hyperparameters and the length parameter.
pub fn gibbs_sweep(
    state: &mut TrainerState,
    chants: &[Vec<ToneId>],
    rng: &mut impl Rng,
) -> Result<()> {
    let mut order: Vec<usize> = (0..chants.len()).collect();
    order.shuffle(rng);
    for &i in &order {
        for trace in state.traces[i].iter().rev() {
            state.model.remove_segment(trace)?;
        }
        let seg = sample_segmentation(&state.model, &chants[i], rng);
        state.traces[i] = add_chant(&mut state.model, &chants[i], &seg, rng)?;
        state.segmentations[i] = seg;
    }
    state.sweep += 1;
    state.model.resample_hyperparameters(rng);
    state.model.resample_lambda(rng);
    Ok(())
}

/// Runs Gibbs sweeps with patience-based early stopping on validation
/// perplexity; returns the best-validation model and per-sweep history.
pub fn train(
    train_chants: &[Vec<ToneId>],
    validation_chants: &[Vec<ToneId>],
    model: NhpylmModel,
    config: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<TrainOutcome> {
    let state = init_random(train_chants, model, rng)?;
    train_from(state, train_chants, validation_chants, config, rng)
}

/// Continues training from an already-initialized state, so callers can
/// draw initialization and sweeps from separate rng streams.
pub fn train_from(
    mut state: TrainerState,
    train_chants: &[Vec<ToneId>],
    validation_chants: &[Vec<ToneId>],
    config: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<TrainOutcome> {
    assert!(config.max_sweeps >= 1 && config.patience >= 1);
    let mut history = Vec::new();
    let mut best_validation = f64::INFINITY;
    let mut best_sweep = 0;
    let mut best_model = state.model.clone();
    let mut stale = 0usize;
    let mut converged = false;
    for sweep in 1..=config.max_sweeps {
        gibbs_sweep(&mut state, train_chants, rng)?;
        let train_ppl = perplexity(&state.model, train_chants, &state.segmentations)?;
        let val_ppl = if validation_chants.is_empty() {
            train_ppl
        } else {
            heldout_perplexity(&state.model, validation_chants)?
        };
        history.push(SweepRecord {
            sweep,
            train_perplexity: train_ppl,
            validation_perplexity: val_ppl,
            lambda: state.model.lambda(),
            segment_params: state
                .model
                .segment_tree()
                .depth_params()
                .iter()
                .map(|p| (p.d, p.theta))
                .collect(),
            tone_params: state
                .model
                .tone_tree()
                .depth_params()
                .iter()
                .map(|p| (p.d, p.theta))
                .collect(),
        });
        if val_ppl < best_validation {
            best_validation = val_ppl;
            best_sweep = sweep;
            best_model = state.model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                converged = true;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model: best_model,
        history,
        best_validation,
        best_sweep,
        converged,
    })
}

/// Synthetic segmentation benchmark: 500 sequences, each the
/// concatenation of 20 words drawn uniformly from a fixed lexicon of
/// five length-3 words over a 4-symbol alphabet. Returns the sequences
/// and their true interior cut positions.
///
/// Sequence length matters for learnability: blocked resampling escapes
/// fragment modes far more reliably when each sequence carries many
/// words, so shorter settings recover boundaries noticeably worse.
pub fn synthetic_word_corpus(seed: u64) -> (Vec<Vec<ToneId>>, Vec<Vec<usize>>) {
    const WORDS: [[ToneId; 3]; 5] = [
        [0, 1, 2],
        [3, 0, 3],
        [2, 2, 1],
        [1, 3, 0],
        [0, 0, 2],
    ];
    const WORDS_PER_SEQ: usize = 20;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let chants: Vec<Vec<ToneId>> = (0..500)
        .map(|_| {
            (0..WORDS_PER_SEQ)
                .flat_map(|_| WORDS[rng.gen_range(0..WORDS.len())])
                .collect()
        })
        .collect();
    let gold: Vec<Vec<usize>> = chants
        .iter()
        .map(|_| (1..WORDS_PER_SEQ).map(|w| 3 * w).collect())
        .collect();
    (chants, gold)
}

/// Micro-averaged F1 over interior cut positions.
pub fn boundary_f1(predicted: &[Vec<usize>], gold: &[Vec<usize>]) -> Result<f64> {
    if predicted.is_empty() || predicted.len() != gold.len() {
        return Err(Error::EmptyInput);
    }
    let (mut tp, mut np, mut ng) = (0usize, 0usize, 0usize);
    for (p, g) in predicted.iter().zip(gold) {
        let gs: std::collections::BTreeSet<usize> = g.iter().copied().collect();
        tp += p.iter().filter(|c| gs.contains(c)).count();
        np += p.len();
        ng += g.len();
    }
    if np + ng == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / (np + ng) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nhpylm::NhpylmConfig;
    use crate::tone::ToneAlphabet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn tiny_model() -> NhpylmModel {
        let alphabet = ToneAlphabet::from_pitch_letters(['f', 'g']).unwrap();
        let config = NhpylmConfig {
            max_segment_len: 3,
            tone_depth: 4,
            ..NhpylmConfig::default()
        };
        NhpylmModel::new(alphabet, config)
    }

    /// Model with some structure: a handful of chants seated.
    fn trained_tiny_model(seed: u64) -> NhpylmModel {
        let chants: Vec<Vec<ToneId>> = vec![
            vec![0, 1, 0, 1, 0, 0],
            vec![1, 1, 0, 1],
            vec![0, 0, 0, 1, 1, 0, 1],
            vec![1, 0],
            vec![0, 1, 1, 1, 0, 0, 1, 0],
        ];
        let mut r = rng(seed);
        let mut state = init_random(&chants, tiny_model(), &mut r).unwrap();
        for _ in 0..5 {
            gibbs_sweep(&mut state, &chants, &mut r).unwrap();
        }
        state.model
    }

    /// All ordered compositions of n into parts of size 1..=max.
    fn compositions(n: usize, max: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for k in 1..=max.min(n) {
            for mut rest in compositions(n - k, max) {
                rest.insert(0, k);
                out.push(rest);
            }
        }
        out
    }

    /// Tail-first path score, matching the lattice's operation order.
    fn path_score(model: &NhpylmModel, tones: &[ToneId], lengths: &[usize]) -> f64 {
        let mut spans = Vec::new();
        let mut start = 0;
        for &len in lengths {
            spans.push((start, len));
            start += len;
        }
        let prev_of = |i: usize| {
            if i == 0 {
                BOM
            } else {
                let (s, l) = spans[i - 1];
                model.context_of(&tones[s..s + l])
            }
        };
        let mut score = model
            .segment_prob(prev_of(spans.len()), SegmentRef::Eom)
            .unwrap()
            .ln();
        for i in (0..spans.len()).rev() {
            let (s, l) = spans[i];
            score = model
                .segment_prob(prev_of(i), SegmentRef::Tones(&tones[s..s + l]))
                .unwrap()
                .ln()
                + score;
        }
        score
    }

    /// Brute-force argmax with the documented tie-breaks.
    fn enumerate_best(model: &NhpylmModel, tones: &[ToneId]) -> (Segmentation, f64) {
        let mut best: Option<(f64, usize, Vec<usize>)> = None;
        for lengths in compositions(tones.len(), model.max_segment_len()) {
            let score = path_score(model, tones, &lengths);
            let cuts = Segmentation { lengths: lengths.clone() }.cut_positions();
            let better = match &best {
                None => true,
                Some((bs, bn, bc)) => {
                    score > *bs
                        || (score == *bs && lengths.len() < *bn)
                        || (score == *bs && lengths.len() == *bn && cuts < *bc)
                }
            };
            if better {
                best = Some((score, lengths.len(), cuts.clone()));
                // Keep lengths via cuts: reconstruct below.
            }
        }
        let (score, _, cuts) = best.unwrap();
        let mut lengths = Vec::new();
        let mut prev = 0;
        for c in cuts.iter().chain(std::iter::once(&tones.len())) {
            lengths.push(c - prev);
            prev = *c;
        }
        (Segmentation { lengths }, score)
    }

    #[test]
    fn length_one_chant_has_unique_segmentation() {
        let model = tiny_model();
        let mut r = rng(1);
        let seg = sample_segmentation(&model, &[1], &mut r);
        assert_eq!(seg.lengths, vec![1]);
        assert_eq!(viterbi_segment(&model, &[1]).lengths, vec![1]);
    }

    #[test]
    fn forward_mass_matches_enumeration() {
        let model = trained_tiny_model(2);
        let mut r = rng(3);
        for len in 1..=10usize {
            let tones: Vec<ToneId> = (0..len).map(|_| r.gen_range(0..2u32)).collect();
            let lattice = chant_log_mass(&model, &tones);
            let brute = logsumexp(
                &compositions(len, 3)
                    .iter()
                    .map(|ls| path_score(&model, &tones, ls))
                    .collect::<Vec<_>>(),
            );
            let rel = ((lattice - brute).abs()) / brute.abs().max(1e-300);
            assert!(rel < 1e-9, "len {len}: {lattice} vs {brute}");
        }
    }

    #[test]
    fn viterbi_matches_enumeration_argmax() {
        let model = trained_tiny_model(4);
        let mut r = rng(5);
        for case in 0..60 {
            let len = 1 + (case % 10);
            let tones: Vec<ToneId> = (0..len).map(|_| r.gen_range(0..2u32)).collect();
            let decoded = viterbi_segment(&model, &tones);
            let (expected, best_score) = enumerate_best(&model, &tones);
            assert_eq!(
                decoded, expected,
                "tones {tones:?} (best score {best_score})"
            );
        }
    }

    #[test]
    fn viterbi_breaks_ties_toward_earliest_cuts() {
        // Untrained model: equal-length spans have identical base
        // probabilities, so cut patterns that are permutations of the
        // same multiset of lengths tie exactly; the decode must agree
        // with the enumeration comparator on every input.
        let model = tiny_model();
        for tones in [
            vec![0u32, 0, 1],
            vec![0, 1, 0, 1],
            vec![1, 1, 1, 1, 1],
            vec![0, 1, 1, 0, 0, 1],
        ] {
            let decoded = viterbi_segment(&model, &tones);
            let (expected, _) = enumerate_best(&model, &tones);
            assert_eq!(decoded, expected, "tones {tones:?}");
        }
    }

    #[test]
    fn viterbi_is_deterministic_and_frozen() {
        let model = trained_tiny_model(6);
        let tones = vec![0u32, 1, 1, 0, 1, 0];
        let before = model.fingerprint();
        let a = viterbi_segment(&model, &tones);
        let b = viterbi_segment(&model, &tones);
        let _ = chant_log_mass(&model, &tones);
        let _ = heldout_perplexity(&model, std::slice::from_ref(&tones)).unwrap();
        assert_eq!(a, b);
        assert_eq!(model.fingerprint(), before);
    }

    #[test]
    fn sampler_matches_enumerated_posterior() {
        let model = trained_tiny_model(7);
        let tones = vec![0u32, 1, 1, 0, 0, 1];
        // Exact posterior over all compositions of 6 into parts <= 3.
        let all = compositions(6, 3);
        let scores: Vec<f64> = all
            .iter()
            .map(|ls| path_score(&model, &tones, ls))
            .collect();
        let total = logsumexp(&scores);
        let exact: BTreeMap<Vec<usize>, f64> = all
            .iter()
            .zip(&scores)
            .map(|(ls, s)| (ls.clone(), (s - total).exp()))
            .collect();

        let draws = 50_000;
        let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        let mut r = rng(8);
        for _ in 0..draws {
            let seg = sample_segmentation(&model, &tones, &mut r);
            seg.validate(tones.len(), 3).unwrap();
            *counts.entry(seg.lengths).or_default() += 1;
        }
        let tv: f64 = exact
            .iter()
            .map(|(ls, p)| {
                let emp = counts.get(ls).copied().unwrap_or(0) as f64 / draws as f64;
                (emp - p).abs()
            })
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.01, "total variation {tv}");
    }

    #[test]
    fn init_random_respects_cap_and_accounting() {
        let mut r = rng(9);
        let chants: Vec<Vec<ToneId>> = (0..30)
            .map(|i| (0..(1 + i % 9)).map(|j| (j % 2) as u32).collect())
            .collect();
        let state = init_random(&chants, tiny_model(), &mut r).unwrap();
        for (seg, tones) in state.segmentations.iter().zip(&chants) {
            seg.validate(tones.len(), 3).unwrap();
        }
        let expected: u64 = state
            .segmentations
            .iter()
            .map(|s| s.lengths.len() as u64 + 1)
            .sum();
        assert_eq!(state.model.customer_count(), expected);
        assert_eq!(
            state.segmentations[0].lengths,
            vec![1],
            "one-tone chant has the unique segmentation"
        );
        state.model.check_consistency().unwrap();
    }

    #[test]
    fn sweeps_preserve_accounting() {
        let mut r = rng(10);
        let chants: Vec<Vec<ToneId>> = (0..20)
            .map(|i| (0..(2 + i % 7)).map(|j| ((i + j) % 2) as u32).collect())
            .collect();
        let mut state = init_random(&chants, tiny_model(), &mut r).unwrap();
        for _ in 0..5 {
            gibbs_sweep(&mut state, &chants, &mut r).unwrap();
            let expected: u64 = state
                .segmentations
                .iter()
                .map(|s| s.lengths.len() as u64 + 1)
                .sum();
            assert_eq!(state.model.customer_count(), expected);
            state.model.check_consistency().unwrap();
            for (seg, tones) in state.segmentations.iter().zip(&chants) {
                seg.validate(tones.len(), 3).unwrap();
            }
        }
        // Full teardown empties the model.
        for i in 0..chants.len() {
            for trace in state.traces[i].iter().rev() {
                state.model.remove_segment(trace).unwrap();
            }
        }
        assert_eq!(state.model.customer_count(), 0);
        assert!(state.model.tone_tree().is_empty());
    }

    #[test]
    fn perplexity_fixed_points() {
        assert!((perplexity_from_nats((1.0f64 / 8.0).ln() * 16.0, 16) - 8.0).abs() < 1e-12);
        assert!((perplexity_from_nats(0.0, 7) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn train_returns_best_validation_state() {
        let mut r = rng(11);
        let chants: Vec<Vec<ToneId>> = (0..12)
            .map(|i| (0..(3 + i % 5)).map(|j| ((i * j) % 2) as u32).collect())
            .collect();
        let (train_set, val_set) = chants.split_at(9);
        let config = TrainConfig {
            max_sweeps: 8,
            patience: 3,
            ..TrainConfig::default()
        };
        let outcome = train(train_set, val_set, tiny_model(), &config, &mut r).unwrap();
        assert!(!outcome.history.is_empty());
        assert!(outcome.history.len() <= 8);
        let min_val = outcome
            .history
            .iter()
            .map(|h| h.validation_perplexity)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(outcome.best_validation, min_val);
        let best_row = outcome
            .history
            .iter()
            .find(|h| h.sweep == outcome.best_sweep)
            .unwrap();
        assert_eq!(best_row.validation_perplexity, min_val);
        // The returned model reproduces the recorded best score.
        let replay = heldout_perplexity(&outcome.model, val_set).unwrap();
        assert!((replay - outcome.best_validation).abs() < 1e-9);
    }

    #[test]
    fn single_sweep_history() {
        let mut r = rng(12);
        let chants: Vec<Vec<ToneId>> = vec![vec![0, 1, 0], vec![1, 1]];
        let config = TrainConfig {
            max_sweeps: 1,
            patience: 1,
            ..TrainConfig::default()
        };
        let outcome = train(&chants, &[], tiny_model(), &config, &mut r).unwrap();
        assert_eq!(outcome.history.len(), 1);
    }

    #[test]
    fn boundary_f1_basics() {
        let perfect = boundary_f1(&[vec![3, 6]], &[vec![3, 6]]).unwrap();
        assert_eq!(perfect, 1.0);
        let none = boundary_f1(&[vec![1, 2]], &[vec![3, 6]]).unwrap();
        assert_eq!(none, 0.0);
        let half = boundary_f1(&[vec![3]], &[vec![3, 6]]).unwrap();
        assert!((half - 2.0 / 3.0).abs() < 1e-12);
        assert!(boundary_f1(&[], &[]).is_err());
    }

    #[test]
    fn recovers_synthetic_word_boundaries() {
        // Five fixed length-3 words over a 4-symbol alphabet; 500
        // sequences of 20 words each. After 50 sweeps the decode should
        // find at least 80% of the true boundaries (F1); this fixture
        // clears the floor across training seeds.
        let (chants, gold) = synthetic_word_corpus(13);
        let alphabet = ToneAlphabet::from_pitch_letters(['c', 'd', 'e', 'f']).unwrap();
        let model = NhpylmModel::new(alphabet, NhpylmConfig::default());
        let mut r = rng(13);
        let mut state = init_random(&chants, model, &mut r).unwrap();
        for _ in 0..50 {
            gibbs_sweep(&mut state, &chants, &mut r).unwrap();
        }
        let decoded = viterbi_corpus(&state.model, &chants);
        let pred: Vec<Vec<usize>> = decoded.iter().map(|s| s.cut_positions()).collect();
        let f1 = boundary_f1(&pred, &gold).unwrap();
        assert!(f1 >= 0.80, "boundary F1 {f1}");
    }
}
