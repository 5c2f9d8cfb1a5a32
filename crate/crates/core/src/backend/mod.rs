//! The model contract and its reference implementations.
//!
//! Every other module talks to models through [`LanguageModel`]: answer
//! log-likelihood with gradients, a KL term against a reference model, and
//! deterministic greedy generation. Models own their tokenization; callers
//! pass raw question and answer text.
//!
//! Two backends ship with the crate:
//!
//! - [`TabularModel`]: one softmax row over a closed answer set per known
//!   question. Gradients are exact, which makes it the oracle for loss and
//!   gradient checks.
//! - [`TinyNeuralModel`]: a small word-level sequence model trained with
//!   hand-written backpropagation, used for generalization experiments.
//!
//! An out-of-tree adapter for a full-scale model implements
//! [`LanguageModel`] (and [`Checkpointable`] if it should round-trip through
//! the CLI); nothing else in the pipeline depends on the concrete backend.

mod checkpoint;
mod neural;
mod tabular;
pub mod tokenizer;

use std::ops::Deref;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::Result;

pub use checkpoint::{AnyModel, CheckpointFile, Checkpointable, TensorBlob, CHECKPOINT_FORMAT_VERSION};
pub use neural::{NeuralConfig, TinyNeuralModel};
pub use tabular::{TabularGradient, TabularModel};
pub use tokenizer::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Tabular,
    Neural,
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackendKind::Tabular => "tabular",
            BackendKind::Neural => "neural",
        })
    }
}

impl std::str::FromStr for BackendKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tabular" => Ok(BackendKind::Tabular),
            "neural" => Ok(BackendKind::Neural),
            other => Err(crate::Error::InvalidArgument(format!(
                "unknown backend {other:?} (expected tabular or neural)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub gradients: bool,
    pub generation: bool,
}

/// Gradient of a scalar with respect to a model's flat parameter vector.
pub trait GradientBuffer: Clone + Send + Sync {
    /// `self += scale * other`
    fn add_scaled(&mut self, other: &Self, scale: f64);

    fn scale(&mut self, factor: f64);

    /// Visits every stored entry as (flat parameter index, value). Entries not
    /// visited are zero.
    fn for_each_entry(&self, f: impl FnMut(usize, f64));

    fn get(&self, index: usize) -> f64;
}

/// Dense gradient used by backends whose every example touches most
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGradient(pub Vec<f64>);

impl GradientBuffer for DenseGradient {
    fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    fn scale(&mut self, factor: f64) {
        self.0.iter_mut().for_each(|x| *x *= factor);
    }

    fn for_each_entry(&self, mut f: impl FnMut(usize, f64)) {
        for (i, &x) in self.0.iter().enumerate() {
            f(i, x);
        }
    }

    fn get(&self, index: usize) -> f64 {
        self.0[index]
    }
}

/// A conditional answer model `M(answer | question)` with parameters θ.
///
/// Read methods take `&self` and are safe to call concurrently on a fixed
/// parameter snapshot; updates go through [`LanguageModel::parameters_mut`]
/// and need exclusive access.
pub trait LanguageModel: Clone + Send + Sync + 'static {
    type Gradient: GradientBuffer;

    fn kind(&self) -> BackendKind;

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            gradients: true,
            generation: true,
        }
    }

    /// `log M(answer | question)` in nats.
    fn answer_log_likelihood(&self, question: &str, answer: &str) -> Result<f64>;

    /// Computes `ll = log M(answer | question)`, asks `weight(ll)` for a
    /// multiplier `w`, and adds `w * ∇θ ll` to `grad`. Returns `ll`.
    fn accumulate_log_likelihood<F>(&self, question: &str, answer: &str, grad: &mut Self::Gradient, weight: F) -> Result<f64>
    where
        F: FnOnce(f64) -> Result<f64>;

    /// `KL(reference(·|question) ‖ self(·|question))`. For sequence models
    /// this is the mean over positions of the next-token KL under teacher
    /// forcing on `answer`; for closed-answer models `answer` only has to be
    /// a valid answer.
    fn kl_from_reference(&self, reference: &Self, question: &str, answer: &str) -> Result<f64>;

    /// Adds `scale * ∇θ KL(reference ‖ self)` to `grad`; returns the KL.
    fn accumulate_kl_from_reference(
        &self,
        reference: &Self,
        question: &str,
        answer: &str,
        scale: f64,
        grad: &mut Self::Gradient,
    ) -> Result<f64>;

    /// Deterministic greedy decode.
    fn generate(&self, question: &str) -> Result<String>;

    fn zero_gradient(&self) -> Self::Gradient;

    fn parameters(&self) -> &[f64];

    fn parameters_mut(&mut self) -> &mut [f64];

    /// Gradient of `log M(answer | question)` alone.
    fn log_likelihood_gradient(&self, question: &str, answer: &str) -> Result<(f64, Self::Gradient)> {
        let mut g = self.zero_gradient();
        let ll = self.accumulate_log_likelihood(question, answer, &mut g, |_| Ok(1.0))?;
        Ok((ll, g))
    }

    /// Snapshot whose outputs never change while `self` keeps training.
    fn clone_frozen(&self) -> Frozen<Self> {
        Frozen(Arc::new(self.clone()))
    }
}

/// Read-only shared snapshot of a model, used as the reference `M_o`.
#[derive(Debug)]
pub struct Frozen<M>(Arc<M>);

impl<M> Clone for Frozen<M> {
    fn clone(&self) -> Self {
        Frozen(Arc::clone(&self.0))
    }
}

impl<M> Deref for Frozen<M> {
    type Target = M;

    fn deref(&self) -> &M {
        &self.0
    }
}

impl<M: LanguageModel> Frozen<M> {
    pub fn new(model: M) -> Self {
        Frozen(Arc::new(model))
    }

    /// Freezing a frozen snapshot shares it.
    pub fn clone_frozen(&self) -> Frozen<M> {
        self.clone()
    }

    pub fn ptr_eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    /// A trainable copy of the snapshot.
    pub fn thaw(&self) -> M {
        (*self.0).clone()
    }
}
