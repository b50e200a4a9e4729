//! Per-mode model ensemble and Bayes-rule mode classification.
//!
//! One segmentation model is trained per church mode (1 through 8) on
//! that mode's chants alone. A chant is classified by scoring it under
//! every mode model — by default the log likelihood of each model's own
//! best segmentation — plus the log mode prior, and taking the argmax.
//! The winning model's segmentation is what downstream feature
//! extraction consumes.

use crate::error::{Error, Result};
use crate::nhpylm::NhpylmModel;
use crate::tone::ToneId;
use crate::trainer::{self, SweepRecord, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Number of church modes.
pub const MODE_COUNT: usize = 8;

/// Ensemble behavior switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EnsembleConfig {
    /// Use a uniform mode prior instead of empirical training frequencies.
    pub uniform_prior: bool,
    /// Score chants by total lattice mass instead of the likelihood of
    /// the per-mode optimal segmentation.
    pub full_sum_scoring: bool,
}

/// An encoded chant together with its mode label (1 through 8).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledChant {
    pub tones: Vec<ToneId>,
    pub mode: u8,
}

/// Eight per-mode models plus a mode prior.
#[derive(Clone)]
pub struct ModeEnsemble {
    models: Vec<NhpylmModel>,
    prior: Vec<f64>,
    config: EnsembleConfig,
}

/// Outcome of classifying one chant.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeClassification {
    /// Winning mode, 1 through 8; ties go to the lowest mode number.
    pub mode: u8,
    /// Per-mode scores: log likelihood + log prior.
    pub scores: Vec<f64>,
    /// Softmax of the scores (the mode posterior). When every score is
    /// infinitely bad this falls back to the prior itself.
    pub posterior: Vec<f64>,
    /// True when no mode could assign the chant positive probability and
    /// the winner is the prior argmax instead.
    pub all_impossible: bool,
}

/// Result of ensemble training: the ensemble, per-mode training
/// histories (empty for untrained modes), and the modes that had no
/// training chants.
pub struct EnsembleOutcome {
    pub ensemble: ModeEnsemble,
    pub histories: Vec<Vec<SweepRecord>>,
    pub empty_modes: Vec<u8>,
}

fn validate_modes(chants: &[LabeledChant]) -> Result<()> {
    for c in chants {
        if !(1..=MODE_COUNT as u8).contains(&c.mode) {
            return Err(Error::Data(format!("mode {} out of range 1..8", c.mode)));
        }
    }
    Ok(())
}

/// Trains one model per mode, in parallel; mode m uses the derived seed
/// (base seed + m) so parallel and sequential training agree exactly.
pub fn train_ensemble(
    train: &[LabeledChant],
    validation: &[LabeledChant],
    template: &NhpylmModel,
    train_config: &TrainConfig,
    config: EnsembleConfig,
) -> Result<EnsembleOutcome> {
    if train.is_empty() {
        return Err(Error::EmptyInput);
    }
    validate_modes(train)?;
    validate_modes(validation)?;

    let per_mode: Vec<(NhpylmModel, Vec<SweepRecord>, usize)> = (1..=MODE_COUNT as u8)
        .into_par_iter()
        .map(|m| -> Result<(NhpylmModel, Vec<SweepRecord>, usize)> {
            let chants: Vec<Vec<ToneId>> = train
                .iter()
                .filter(|c| c.mode == m)
                .map(|c| c.tones.clone())
                .collect();
            let val: Vec<Vec<ToneId>> = validation
                .iter()
                .filter(|c| c.mode == m)
                .map(|c| c.tones.clone())
                .collect();
            let count = chants.len();
            if chants.is_empty() {
                return Ok((template.clone(), Vec::new(), 0));
            }
            let mut rng =
                ChaCha8Rng::seed_from_u64(train_config.seed.wrapping_add(m as u64));
            let outcome =
                trainer::train(&chants, &val, template.clone(), train_config, &mut rng)?;
            Ok((outcome.model, outcome.history, count))
        })
        .collect::<Result<_>>()?;

    let total: usize = per_mode.iter().map(|(_, _, n)| n).sum();
    let empty_modes: Vec<u8> = per_mode
        .iter()
        .enumerate()
        .filter(|(_, (_, _, n))| *n == 0)
        .map(|(i, _)| (i + 1) as u8)
        .collect();
    let prior: Vec<f64> = if config.uniform_prior {
        vec![1.0 / MODE_COUNT as f64; MODE_COUNT]
    } else {
        per_mode
            .iter()
            .map(|(_, _, n)| *n as f64 / total as f64)
            .collect()
    };
    let mut models = Vec::with_capacity(MODE_COUNT);
    let mut histories = Vec::with_capacity(MODE_COUNT);
    for (model, history, _) in per_mode {
        models.push(model);
        histories.push(history);
    }
    let ensemble = ModeEnsemble::from_parts(models, prior, config)?;
    Ok(EnsembleOutcome {
        ensemble,
        histories,
        empty_modes,
    })
}

/// Argmax over finite scores, lowest index on exact ties; when no score
/// is finite, falls back to the prior argmax and reports it.
fn select_mode(scores: &[f64], prior: &[f64]) -> (usize, bool) {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if s.is_finite() && best.is_none_or(|b| *s > scores[b]) {
            best = Some(i);
        }
    }
    match best {
        Some(i) => (i, false),
        None => {
            let mut w = 0;
            for i in 1..prior.len() {
                if prior[i] > prior[w] {
                    w = i;
                }
            }
            (w, true)
        }
    }
}

fn softmax(scores: &[f64]) -> Option<Vec<f64>> {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return None;
    }
    let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    Some(exps.iter().map(|e| e / z).collect())
}

impl ModeEnsemble {
    /// Assembles an ensemble, checking the structural invariants: eight
    /// models sharing alphabet and length cap, and a normalized prior.
    pub fn from_parts(
        models: Vec<NhpylmModel>,
        prior: Vec<f64>,
        config: EnsembleConfig,
    ) -> Result<Self> {
        if models.len() != MODE_COUNT || prior.len() != MODE_COUNT {
            return Err(Error::Config(format!(
                "ensemble needs exactly {MODE_COUNT} models and priors"
            )));
        }
        if prior.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Config("negative or NaN prior".into()));
        }
        let sum: f64 = prior.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("prior sums to {sum}, not 1")));
        }
        let cap = models[0].max_segment_len();
        let alphabet = models[0].alphabet();
        for m in &models[1..] {
            if m.max_segment_len() != cap || m.alphabet() != alphabet {
                return Err(Error::Config(
                    "ensemble models disagree on alphabet or length cap".into(),
                ));
            }
        }
        Ok(ModeEnsemble {
            models,
            prior,
            config,
        })
    }

    pub fn models(&self) -> &[NhpylmModel] {
        &self.models
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn config(&self) -> EnsembleConfig {
        self.config
    }

    /// Per-mode score of a chant: log likelihood (best-segmentation by
    /// default, total lattice mass behind the flag) plus log prior.
    fn mode_score(&self, m_idx: usize, tones: &[ToneId]) -> Result<f64> {
        let model = &self.models[m_idx];
        let loglik = if self.config.full_sum_scoring {
            trainer::chant_log_mass(model, tones)
        } else {
            let seg = trainer::viterbi_segment(model, tones);
            model.segmentation_log_prob(tones, &seg)?
        };
        Ok(loglik + self.prior[m_idx].ln())
    }

    /// Scores the chant under all eight modes and picks the winner.
    pub fn classify_mode(&self, tones: &[ToneId]) -> Result<ModeClassification> {
        if tones.is_empty() {
            return Err(Error::EmptyInput);
        }
        let scores: Vec<f64> = (0..MODE_COUNT)
            .map(|m| self.mode_score(m, tones))
            .collect::<Result<_>>()?;
        let (winner, all_impossible) = select_mode(&scores, &self.prior);
        let posterior = softmax(&scores).unwrap_or_else(|| self.prior.clone());
        Ok(ModeClassification {
            mode: (winner + 1) as u8,
            scores,
            posterior,
            all_impossible,
        })
    }

    /// Segments the chant with the winning mode's model.
    pub fn segment_with_ensemble(&self, tones: &[ToneId]) -> Result<crate::nhpylm::Segmentation> {
        let classification = self.classify_mode(tones)?;
        let model = &self.models[(classification.mode - 1) as usize];
        Ok(trainer::viterbi_segment(model, tones))
    }
}
