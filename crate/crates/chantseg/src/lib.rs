//! Unsupervised segmentation of Gregorian chant melodies and mode
//! classification on top of the discovered segments.
//!
//! The library is organized in layers. `corpus` turns Volpiano CSV
//! exports into clean tone sequences. `pyp` holds the Pitman-Yor
//! restaurant bookkeeping that both language models are built on.
//! `nhpylm` nests a tone-level model inside a segment-level bigram model,
//! `trainer` fits it by blocked Gibbs sampling, and `ensemble` trains one
//! model per mode for Bayes-rule classification. `features`, `baselines`,
//! and `analysis` cover the downstream classifiers, reference segmenters,
//! and descriptive statistics.

pub mod analysis;
pub mod baselines;
pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod features;
pub mod nhpylm;
pub mod pyp;
pub mod seeds;
pub mod storage;
pub mod tone;
pub mod trainer;
pub mod volpiano;

pub use error::{Error, Result};
