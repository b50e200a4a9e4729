//! The nested segmentation model: a bigram Pitman-Yor model over
//! segments whose base measure comes from a variable-order Pitman-Yor
//! model over tones, with a Poisson correction on segment length.
//!
//! A segment's base probability multiplies the tone model's predictive
//! probabilities for its tones and end-of-segment marker, divides out
//! the geometric length distribution the tone model implies, and
//! multiplies back a Poisson length distribution (renormalized over the
//! allowed lengths 1..L). End-of-melody is a regular dish of the segment
//! tree whose base probability is the tone model's unigram
//! end-of-segment probability, which makes the segment-level base
//! measure proper: untrained, bases over all segments plus end-of-melody
//! sum to exactly 1.
//!
//! When a segment gets its first table at the segment-tree root, the
//! tree has effectively drawn that segment from the base measure, so its
//! spelling (tones plus end marker) is added to the tone model; when the
//! last root table dies the spelling is withdrawn. The traces needed for
//! exact withdrawal are kept per root table.

use crate::error::{Error, Result};
use crate::pyp::{ContextTree, PypHyperParams, Sym, TableId, Trace};
use crate::tone::{ToneAlphabet, ToneId};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Begin-of-melody: context symbol only, never generated.
pub const BOM: Sym = 0;
/// End-of-melody: a generated dish of the segment tree.
pub const EOM: Sym = 1;
/// Context symbol for a preceding segment that is not in the model;
/// no child node ever carries it, so scoring backs off to the unigram.
pub const UNKNOWN_SEGMENT: Sym = u32::MAX;

const FIRST_SEGMENT_ID: Sym = 2;

/// Bidirectional map between segment tone strings and dense ids.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentInterner {
    ids: BTreeMap<Vec<ToneId>, Sym>,
    segments: Vec<Vec<ToneId>>,
}

impl SegmentInterner {
    pub fn intern(&mut self, tones: &[ToneId]) -> Sym {
        if let Some(&id) = self.ids.get(tones) {
            return id;
        }
        let id = FIRST_SEGMENT_ID + self.segments.len() as Sym;
        self.ids.insert(tones.to_vec(), id);
        self.segments.push(tones.to_vec());
        id
    }

    pub fn lookup(&self, tones: &[ToneId]) -> Option<Sym> {
        self.ids.get(tones).copied()
    }

    pub fn tones(&self, id: Sym) -> Option<&[ToneId]> {
        self.segments
            .get(id.checked_sub(FIRST_SEGMENT_ID)? as usize)
            .map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

/// Structural and prior configuration of the nested model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NhpylmConfig {
    /// Hard cap L on segment length.
    pub max_segment_len: usize,
    /// Maximum tone context depth D.
    pub tone_depth: usize,
    /// Gamma prior (shape, rate) on the Poisson length parameter.
    pub lambda_prior_shape: f64,
    pub lambda_prior_rate: f64,
    /// Length-correction switch; on divides out the implied geometric
    /// length distribution and multiplies in the Poisson.
    pub poisson_correction: bool,
    pub segment_hyper: PypHyperParams,
    pub tone_hyper: PypHyperParams,
}

impl Default for NhpylmConfig {
    fn default() -> Self {
        NhpylmConfig {
            max_segment_len: 7,
            tone_depth: 8,
            lambda_prior_shape: 6.0,
            lambda_prior_rate: 1.2,
            poisson_correction: true,
            segment_hyper: PypHyperParams::default(),
            tone_hyper: PypHyperParams::default(),
        }
    }
}

/// One chant's segmentation, stored as consecutive segment lengths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    pub lengths: Vec<usize>,
}

impl Segmentation {
    /// Checks the cover and length-cap invariants against a tone count.
    pub fn validate(&self, tone_count: usize, max_len: usize) -> Result<()> {
        if self.lengths.iter().sum::<usize>() != tone_count {
            return Err(Error::InvalidSegmentation(format!(
                "segment lengths sum to {} but the chant has {tone_count} tones",
                self.lengths.iter().sum::<usize>()
            )));
        }
        if let Some(&bad) = self.lengths.iter().find(|&&l| l == 0 || l > max_len) {
            return Err(Error::InvalidSegmentation(format!(
                "segment length {bad} outside 1..={max_len}"
            )));
        }
        Ok(())
    }

    /// Segment slices over the chant's tones.
    pub fn segments<'a>(&'a self, tones: &'a [ToneId]) -> impl Iterator<Item = &'a [ToneId]> {
        self.lengths.iter().scan(0usize, move |start, &len| {
            let s = *start;
            *start += len;
            Some(&tones[s..s + len])
        })
    }

    /// Interior cut positions (a cut at p splits tones p-1 and p).
    pub fn cut_positions(&self) -> Vec<usize> {
        let mut cuts = Vec::new();
        let mut pos = 0;
        for &len in &self.lengths[..self.lengths.len().saturating_sub(1)] {
            pos += len;
            cuts.push(pos);
        }
        cuts
    }
}

/// Reference to one step of the segment-level bigram chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentRef<'a> {
    Tones(&'a [ToneId]),
    Eom,
}

/// Proof of one added segment customer, for exact removal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentTrace(Trace);

impl SegmentTrace {
    /// Segment-tree dish id the customer was seated for.
    pub fn dish(&self) -> Sym {
        self.0.dish
    }
}

/// The nested model; see the module docs for the moving parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NhpylmModel {
    config: NhpylmConfig,
    alphabet: ToneAlphabet,
    segment_tree: ContextTree,
    tone_tree: ContextTree,
    lambda: f64,
    interner: SegmentInterner,
    /// Tone-model traces per live segment-tree root table.
    spellings: BTreeMap<TableId, Vec<Trace>>,
    /// Count and summed length of current segment customers (tokens).
    segment_tokens: u64,
    segment_token_tones: u64,
}

impl NhpylmModel {
    pub fn new(alphabet: ToneAlphabet, config: NhpylmConfig) -> Self {
        let lambda = config.lambda_prior_shape / config.lambda_prior_rate;
        NhpylmModel {
            segment_tree: ContextTree::new(1, false, config.segment_hyper.clone()),
            tone_tree: ContextTree::new(config.tone_depth, true, config.tone_hyper.clone()),
            alphabet,
            lambda,
            interner: SegmentInterner::default(),
            spellings: BTreeMap::new(),
            segment_tokens: 0,
            segment_token_tones: 0,
            config,
        }
    }

    pub fn config(&self) -> &NhpylmConfig {
        &self.config
    }

    pub fn alphabet(&self) -> &ToneAlphabet {
        &self.alphabet
    }

    pub fn max_segment_len(&self) -> usize {
        self.config.max_segment_len
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn set_lambda(&mut self, lambda: f64) {
        assert!(lambda > 0.0);
        self.lambda = lambda;
    }

    pub fn interner(&self) -> &SegmentInterner {
        &self.interner
    }

    /// Tone-tree dish id of the end-of-segment marker.
    pub fn eos(&self) -> Sym {
        self.alphabet.end_id()
    }

    /// Uniform base over tones plus end-of-segment.
    fn tone_base(&self) -> f64 {
        1.0 / (self.alphabet.size() as f64 + 1.0)
    }

    /// Predictive probability of a tone (or end-of-segment) given the
    /// preceding tones, marginalized over context lengths.
    pub fn tone_prob(&self, dish: Sym, ctx: &[ToneId]) -> f64 {
        let chain = self.tone_tree.predictive_path(ctx, Some(dish), self.tone_base());
        let depths = self.tone_tree.depth_distribution(ctx);
        chain.iter().zip(&depths).map(|(p, w)| p * w).sum()
    }

    /// Unigram end-of-segment probability, the q of the implied
    /// geometric length distribution.
    pub fn eos_unigram_prob(&self) -> f64 {
        self.tone_prob(self.eos(), &[])
    }

    /// Poisson pmf at k, renormalized over 1..=L.
    fn poisson_weight(&self, k: usize) -> f64 {
        debug_assert!(k >= 1 && k <= self.config.max_segment_len);
        let mut weights = [0.0f64; 64];
        let mut term = 1.0;
        let mut total = 0.0;
        for j in 1..=self.config.max_segment_len {
            term *= self.lambda / j as f64;
            weights[j] = term;
            total += term;
        }
        weights[k] / total
    }

    /// Multiplier turning a length-k segment's raw string probability
    /// (tones plus end marker) into its corrected base probability:
    /// divides out the geometric length distribution the tone model
    /// implies and multiplies in the renormalized Poisson.
    pub fn length_correction(&self, k: usize) -> f64 {
        if !self.config.poisson_correction {
            return 1.0;
        }
        let q = self.eos_unigram_prob();
        debug_assert!(q > 0.0 && q < 1.0);
        let geometric = (1.0 - q).powi(k as i32 - 1) * q;
        self.poisson_weight(k) / geometric
    }

    /// Base probability of a segment: tone-model string probability with
    /// end marker, length-corrected toward a Poisson.
    pub fn segment_base_prob(&self, tones: &[ToneId]) -> Result<f64> {
        let k = tones.len();
        if k == 0 {
            return Err(Error::InvalidSegmentation("empty segment".into()));
        }
        if k > self.config.max_segment_len {
            return Err(Error::SegmentTooLong {
                len: k,
                cap: self.config.max_segment_len,
            });
        }
        let mut raw = 1.0;
        for i in 0..k {
            raw *= self.tone_prob(tones[i], &tones[..i]);
        }
        raw *= self.tone_prob(self.eos(), tones);
        Ok(raw * self.length_correction(k))
    }

    /// Base probability of the given chain step.
    fn base_prob(&self, seg: SegmentRef<'_>) -> Result<f64> {
        match seg {
            SegmentRef::Tones(tones) => self.segment_base_prob(tones),
            SegmentRef::Eom => Ok(self.eos_unigram_prob()),
        }
    }

    /// Segment-tree dish id for scoring: `None` means the segment has no
    /// counts anywhere and is scored through pure back-off to its base.
    fn dish_of(&self, seg: SegmentRef<'_>) -> Option<Sym> {
        match seg {
            SegmentRef::Tones(tones) => self.interner.lookup(tones),
            SegmentRef::Eom => Some(EOM),
        }
    }

    /// Probability of a segment (or end-of-melody) given the previous
    /// segment's id, under the bigram tree with back-off to the base.
    pub fn segment_prob(&self, prev: Sym, seg: SegmentRef<'_>) -> Result<f64> {
        let base = self.base_prob(seg)?;
        Ok(self
            .segment_tree
            .predictive_prob(&[prev], self.dish_of(seg), base))
    }

    pub fn segment_log_prob(&self, prev: Sym, seg: SegmentRef<'_>) -> Result<f64> {
        Ok(self.segment_prob(prev, seg)?.ln())
    }

    /// Segment-tree predictive with a precomputed base, for lattice
    /// scoring over cached span bases. Bit-identical to [`segment_prob`]
    /// when fed the same dish and base.
    ///
    /// [`segment_prob`]: NhpylmModel::segment_prob
    pub fn segment_prob_with_base(&self, prev: Sym, dish: Option<Sym>, base: f64) -> f64 {
        self.segment_tree.predictive_prob(&[prev], dish, base)
    }

    /// Context id a segment contributes as the previous segment of the
    /// next chain step.
    pub fn context_of(&self, tones: &[ToneId]) -> Sym {
        self.interner.lookup(tones).unwrap_or(UNKNOWN_SEGMENT)
    }

    /// Log probability of a full segmentation: every segment in its
    /// bigram context, then end-of-melody after the last.
    pub fn segmentation_log_prob(&self, tones: &[ToneId], seg: &Segmentation) -> Result<f64> {
        seg.validate(tones.len(), self.config.max_segment_len)?;
        let mut prev = BOM;
        let mut total = 0.0;
        for slice in seg.segments(tones) {
            total += self.segment_log_prob(prev, SegmentRef::Tones(slice))?;
            prev = self.context_of(slice);
        }
        total += self.segment_log_prob(prev, SegmentRef::Eom)?;
        Ok(total)
    }

    /// Seats one tone-model customer at a sampled context depth,
    /// following the posterior over depths for this (context, dish).
    fn add_tone_customer(&mut self, ctx: &[ToneId], dish: Sym, rng: &mut impl Rng) -> Trace {
        let base = self.tone_base();
        let chain = self.tone_tree.predictive_path(ctx, Some(dish), base);
        let depths = self.tone_tree.depth_distribution(ctx);
        let weights: Vec<f64> = chain.iter().zip(&depths).map(|(p, w)| p * w).collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        let mut depth = weights.len() - 1;
        for (n, w) in weights.iter().enumerate() {
            if u < *w {
                depth = n;
                break;
            }
            u -= *w;
        }
        let ctx = self.tone_tree.truncate(ctx);
        let (trace, _) = self
            .tone_tree
            .add_customer(&ctx[ctx.len() - depth..], dish, base, rng);
        trace
    }

    /// Adds a segment's spelling (tones plus end marker, each in its
    /// intra-segment context) to the tone model.
    fn register_spelling(&mut self, table: TableId, tones: &[ToneId], rng: &mut impl Rng) {
        let mut traces = Vec::with_capacity(tones.len() + 1);
        for i in 0..tones.len() {
            traces.push(self.add_tone_customer(&tones[..i], tones[i], rng));
        }
        traces.push(self.add_tone_customer(tones, self.eos(), rng));
        self.spellings.insert(table, traces);
    }

    /// Adds one segment customer under the previous segment's id.
    /// Creating a first root table for a real segment also registers its
    /// spelling in the tone model (end-of-melody has no spelling; its
    /// base is read from the tone model directly).
    pub fn add_segment(
        &mut self,
        prev: Sym,
        seg: SegmentRef<'_>,
        rng: &mut impl Rng,
    ) -> Result<SegmentTrace> {
        let base = self.base_prob(seg)?;
        let dish = match seg {
            SegmentRef::Tones(tones) => {
                self.segment_tokens += 1;
                self.segment_token_tones += tones.len() as u64;
                self.interner.intern(tones)
            }
            SegmentRef::Eom => EOM,
        };
        let (trace, outcome) = self.segment_tree.add_customer(&[prev], dish, base, rng);
        if let Some(table) = outcome.created_root_table {
            if let SegmentRef::Tones(tones) = seg {
                self.register_spelling(table, tones, rng);
            }
        }
        Ok(SegmentTrace(trace))
    }

    /// Removes a previously added segment customer; when the segment's
    /// last root table dies, withdraws its spelling from the tone model.
    pub fn remove_segment(&mut self, trace: &SegmentTrace) -> Result<()> {
        let outcome = self.segment_tree.remove_customer(&trace.0)?;
        if trace.0.dish != EOM {
            self.segment_tokens = self
                .segment_tokens
                .checked_sub(1)
                .ok_or(Error::StaleTrace { table: 0 })?;
            let len = self
                .interner
                .tones(trace.0.dish)
                .map(|t| t.len() as u64)
                .unwrap_or(0);
            self.segment_token_tones = self
                .segment_token_tones
                .checked_sub(len)
                .ok_or(Error::StaleTrace { table: 0 })?;
        }
        if let Some(table) = outcome.removed_root_table {
            if trace.0.dish != EOM {
                let traces = self
                    .spellings
                    .remove(&table)
                    .ok_or(Error::StaleTrace { table })?;
                for t in traces.iter().rev() {
                    self.tone_tree.remove_customer(t)?;
                }
            }
        }
        Ok(())
    }

    /// Redraws the Poisson length parameter from its conjugate
    /// Gamma posterior given the current segment tokens.
    pub fn resample_lambda(&mut self, rng: &mut impl Rng) {
        let shape = self.config.lambda_prior_shape + self.segment_token_tones as f64;
        let rate = self.config.lambda_prior_rate + self.segment_tokens as f64;
        self.lambda = Gamma::new(shape, 1.0 / rate)
            .expect("valid lambda posterior")
            .sample(rng);
        debug_assert!(self.lambda > 0.0);
    }

    /// Resamples both trees' per-depth discounts and concentrations.
    pub fn resample_hyperparameters(&mut self, rng: &mut impl Rng) {
        self.segment_tree.resample_hyperparameters(rng);
        self.tone_tree.resample_hyperparameters(rng);
    }

    pub fn segment_tree(&self) -> &ContextTree {
        &self.segment_tree
    }

    pub fn tone_tree(&self) -> &ContextTree {
        &self.tone_tree
    }

    /// Live segment customers (tokens), end-of-melody included.
    pub fn customer_count(&self) -> u64 {
        self.segment_tree.total_direct_customers()
    }

    /// Digest of all model statistics, for frozen-decode checks.
    pub fn fingerprint(&self) -> u64 {
        use std::collections::hash_map::DefaultHasher;
        use std::hash::{Hash, Hasher};
        let mut h = DefaultHasher::new();
        self.segment_tree.fingerprint().hash(&mut h);
        self.tone_tree.fingerprint().hash(&mut h);
        self.lambda.to_bits().hash(&mut h);
        self.segment_tokens.hash(&mut h);
        self.segment_token_tones.hash(&mut h);
        self.spellings.len().hash(&mut h);
        h.finish()
    }

    /// Cross-checks both trees and the spelling bookkeeping.
    pub fn check_consistency(&self) -> std::result::Result<(), String> {
        self.segment_tree.check_consistency()?;
        self.tone_tree.check_consistency()?;
        let root_tables: Vec<(Sym, TableId)> = self
            .segment_tree
            .root_tables()
            .into_iter()
            .filter(|(dish, _)| *dish != EOM)
            .collect();
        if root_tables.len() != self.spellings.len() {
            return Err(format!(
                "{} segment root tables vs {} spellings",
                root_tables.len(),
                self.spellings.len()
            ));
        }
        for (dish, table) in root_tables {
            match self.spellings.get(&table) {
                None => return Err(format!("root table {table} has no spelling")),
                Some(traces) => {
                    let len = self
                        .interner
                        .tones(dish)
                        .map(|t| t.len())
                        .ok_or_else(|| format!("dish {dish} not interned"))?;
                    if traces.len() != len + 1 {
                        return Err(format!(
                            "spelling of table {table} has {} traces for a length-{len} segment",
                            traces.len()
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}
