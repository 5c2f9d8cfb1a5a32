//! Name-aware unlearning of personal data from conditional language models.
//!
//! The crate is organised around the stages of an unlearning experiment:
//!
//! - [`corpus`]: person records with question/answer pairs, validation,
//!   forget/retain splitting, and a deterministic synthetic corpus.
//! - [`backend`]: the model contract ([`backend::LanguageModel`]) plus two
//!   reference backends, a tabular softmax model with exact gradients and a
//!   small trainable neural sequence model.
//! - [`judge`]: answer correctness verdicts (entailment and neutral count as
//!   correct).
//! - [`memorization`]: per-individual accuracy profiling and selection.
//! - [`objectives`]: forgetting losses (GA, NPO, RGD, RDPO, NAUF) and retain
//!   regularizers (GD, KLD).
//! - [`nauf`]: name-aware refusal templates and contrastive data augmentation.
//! - [`trainer`]: epoch scheduling with forget/retain pairing, optimizers and
//!   the unlearning loop.
//! - [`evaluation`]: Forget/Retain scores, nonsense detection, probe tasks and
//!   report rendering.
//! - [`experiment`]: config files, run manifests, replay and epoch sweeps used
//!   by the command-line front end.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backend;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod judge;
pub mod memorization;
pub mod nauf;
pub mod objectives;
pub mod parallel;
pub mod trainer;

mod util;

pub use error::{Error, Result};
