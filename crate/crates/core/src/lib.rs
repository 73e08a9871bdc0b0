//! Partial-label multi-label attribute learning with a vision-language guided
//! selective loss.
//!
//! Most attributes of a visual instance are unannotated; the two classic ways
//! to train through that — dropping every unannotated term or treating them
//! all as negatives — either waste signal or inject false negatives. The
//! selective loss scores each unannotated feasible attribute with a
//! temperature softmax over precomputed vision-language similarities,
//! stochastically ignores a presence-weighted sample of the high-scoring
//! (ambiguous) ones, and negatifies the rest.
//!
//! The crate provides the full pipeline: data model and synthetic benchmark
//! generation ([`dataset`]), per-object feasible sets ([`feasible`]),
//! presence scoring ([`vlm`]), the loss family and ignore-set sampler
//! ([`loss`]), a deterministic desk-scale trainer ([`trainer`]), and
//! annotated-only mAP evaluation ([`eval`]).

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod feasible;
pub mod loss;
pub mod rng;
pub mod trainer;
pub mod vlm;

pub use error::{Error, Result};
