//! The unlearning loop.
//!
//! Each epoch visits every forget-set training example once, in an order
//! reshuffled under the run seed. When a regularizer is active each forget
//! example is paired with one retain example drawn uniformly at random, so an
//! epoch consumes exactly as many retain examples as there are forget
//! examples. The original model is held as a [`Frozen`] snapshot and serves
//! as the reference for NPO, RDPO and KLD.

mod optimizer;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use optimizer::{AdamWParams, Optimizer, OptimizerKind};

use crate::backend::{BackendKind, Frozen, LanguageModel};
use crate::corpus::{Corpus, SplitAssignment};
use crate::nauf::{self, AugmentedExample, RefusalTemplateSet};
use crate::objectives::{self, ForgetExample, ForgetLoss, LossBatch, LossConfig, Regularizer, RetainExample};
use crate::{util, Error, Result};

/// Learning rate for full-scale language models.
pub const FULL_SCALE_LEARNING_RATE: f64 = 1e-5;
pub const DEFAULT_DIVERGENCE_THRESHOLD: f64 = 1e4;

/// How many retain examples an epoch consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetainBudget {
    /// One retain example per forget example.
    #[default]
    ForgetSetSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub adamw: AdamWParams,
    #[serde(default)]
    pub retain_budget: RetainBudget,
    #[serde(default = "default_divergence")]
    pub divergence_threshold: f64,
}

fn default_divergence() -> f64 {
    DEFAULT_DIVERGENCE_THRESHOLD
}

impl TrainConfig {
    /// Defaults for a reference backend: plain gradient descent at 0.1 for
    /// the tabular model, AdamW for the neural model.
    pub fn for_backend(kind: BackendKind, loss: LossConfig) -> Self {
        let (optimizer, learning_rate, batch_size) = match kind {
            BackendKind::Tabular => (OptimizerKind::Sgd, 0.1, 32),
            BackendKind::Neural => (OptimizerKind::AdamW, 3e-3, 8),
        };
        Self {
            learning_rate,
            batch_size,
            epochs: 5,
            seed: 0,
            loss,
            optimizer,
            adamw: AdamWParams::default(),
            retain_budget: RetainBudget::ForgetSetSize,
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(Error::Config("divergence_threshold must be positive".into()));
        }
        Ok(())
    }
}

/// Everything the loop trains on.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingData {
    pub forget: Vec<ForgetExample>,
    /// Pool the regularizer samples from.
    pub retain: Vec<RetainExample>,
}

impl TrainingData {
    /// Forget-set training questions relabeled for `loss`, retain-set training
    /// questions, and any augmented examples. Augmented data is only
    /// meaningful for NAUF and is rejected for the other losses.
    pub fn assemble(
        split: &SplitAssignment,
        corpus: &Corpus,
        augmented: &[AugmentedExample],
        loss: ForgetLoss,
        relabels: &RefusalTemplateSet,
        seed: u64,
    ) -> Result<Self> {
        if !augmented.is_empty() && loss != ForgetLoss::Nauf {
            return Err(Error::Config(format!("augmented examples can only be trained with NAUF, not {loss}")));
        }
        let mut forget = nauf::forget_examples(split, corpus, loss, relabels, seed)?;
        let mut retain = nauf::retain_examples(split, corpus)?;
        forget.extend(augmented.iter().filter_map(AugmentedExample::to_forget_example));
        retain.extend(augmented.iter().filter_map(AugmentedExample::to_retain_example));
        Ok(Self { forget, retain })
    }
}

/// Batches for one epoch (1-based).
pub fn make_epoch_schedule(data: &TrainingData, config: &TrainConfig, epoch: usize) -> Result<Vec<LossBatch>> {
    if data.forget.is_empty() {
        return Err(Error::EmptyBatch("the forget training set is empty"));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let paired = config.loss.regularizer.is_active();
    if paired && data.retain.is_empty() {
        return Err(Error::Config(format!("the {} regularizer needs a non-empty retain set", config.loss.regularizer)));
    }
    let mut order: Vec<usize> = (0..data.forget.len()).collect();
    order.shuffle(&mut util::derived_rng(config.seed, &format!("epoch/{epoch}/forget")));
    let mut retain_rng = util::derived_rng(config.seed, &format!("epoch/{epoch}/retain"));
    let batches = order
        .chunks(config.batch_size)
        .map(|chunk| LossBatch {
            forget: chunk.iter().map(|&i| data.forget[i].clone()).collect(),
            retain: if paired {
                chunk
                    .iter()
                    .map(|_| data.retain[retain_rng.gen_range(0..data.retain.len())].clone())
                    .collect()
            } else {
                Vec::new()
            },
        })
        .collect();
    Ok(batches)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub epoch: usize,
    pub step: usize,
    pub forget_term: f64,
    pub regularizer_term: f64,
    pub total: f64,
}

pub const TRACE_HEADER: &str = "epoch,step,forget_term,regularizer_term,total";

pub fn trace_to_csv(trace: &[TraceRecord]) -> String {
    let mut out = format!("{TRACE_HEADER}\n");
    for r in trace {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.step, r.forget_term, r.regularizer_term, r.total
        ));
    }
    out
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return Err(Error::InvalidArgument("trace does not start with the expected header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = |m: String| Error::Parse {
                path: "trace".into(),
                line: i + 2,
                message: m,
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(format!("expected 5 fields, got {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(e.to_string()));
            Ok(TraceRecord {
                epoch: f[0].parse().map_err(|e| bad(format!("{e}")))?,
                step: f[1].parse().map_err(|e| bad(format!("{e}")))?,
                forget_term: num(f[2])?,
                regularizer_term: num(f[3])?,
                total: num(f[4])?,
            })
        })
        .collect()
}

pub fn write_trace(trace: &[TraceRecord], path: impl AsRef<Path>) -> Result<()> {
    util::write_file(path.as_ref(), trace_to_csv(trace))
}

#[derive(Debug, Clone)]
pub struct UnlearningRun<M> {
    pub model: M,
    pub trace: Vec<TraceRecord>,
}

/// Trains a copy of `model_o` on `data`. `on_epoch(epoch, model)` runs after
/// every epoch, which is where callers write checkpoints.
pub fn run_unlearning<M, F>(model_o: &Frozen<M>, data: &TrainingData, config: &TrainConfig, mut on_epoch: F) -> Result<UnlearningRun<M>>
where
    M: LanguageModel,
    F: FnMut(usize, &M) -> Result<()>,
{
    config.validate()?;
    let mut model = model_o.thaw();
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, config.adamw, model.parameters().len());
    let mut trace = Vec::new();
    let mut step = 0;
    for epoch in 1..=config.epochs {
        for batch in make_epoch_schedule(data, config, epoch)? {
            step += 1;
            let (terms, grad) = objectives::combined_loss_gradient(&config.loss, &model, model_o, &batch)
                .map_err(|e| e.context(format!("epoch {epoch}, step {step}")))?;
            if !terms.total.is_finite() || terms.total.abs() > config.divergence_threshold {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    total: terms.total,
                });
            }
            trace.push(TraceRecord {
                epoch,
                step,
                forget_term: terms.forget,
                regularizer_term: terms.regularizer,
                total: terms.total,
            });
            optimizer.apply(model.parameters_mut(), &grad);
        }
        if let Some(last) = trace.last() {
            log::info!("epoch {epoch}: last step {step}, total loss {:.6}", last.total);
        }
        on_epoch(epoch, &model)?;
    }
    Ok(UnlearningRun { model, trace })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemorizeConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub adamw: AdamWParams,
}

impl MemorizeConfig {
    pub fn for_backend(kind: BackendKind) -> Self {
        match kind {
            BackendKind::Tabular => Self {
                learning_rate: 0.1,
                batch_size: 32,
                max_epochs: 200,
                seed: 0,
                optimizer: OptimizerKind::Sgd,
                adamw: AdamWParams::default(),
            },
            BackendKind::Neural => Self {
                learning_rate: 3e-3,
                batch_size: 16,
                max_epochs: 60,
                seed: 0,
                optimizer: OptimizerKind::AdamW,
                adamw: AdamWParams {
                    weight_decay: 0.0,
                    ..AdamWParams::default()
                },
            },
        }
    }
}

/// Fine-tunes `model` on question/answer pairs by gradient descent on
/// `-log M(y|x)` until `done(epoch, model)` returns true or the epoch limit
/// is hit. Returns the number of epochs run.
pub fn memorize<M, F>(model: &mut M, examples: &[RetainExample], config: &MemorizeConfig, mut done: F) -> Result<usize>
where
    M: LanguageModel,
    F: FnMut(usize, &M) -> Result<bool>,
{
    if examples.is_empty() {
        return Err(Error::EmptyBatch("nothing to memorize"));
    }
    if config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(Error::Config("memorization needs a positive batch size and learning rate".into()));
    }
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, config.adamw, model.parameters().len());
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut util::derived_rng(config.seed, &format!("memorize/{epoch}")));
        let mut sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<RetainExample> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let (loss, grad) = objectives::regularizer_gradient(Regularizer::Gd, model, model, &batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("memorization loss at epoch {epoch}")));
            }
            sum += loss * batch.len() as f64;
            optimizer.apply(model.parameters_mut(), &grad);
        }
        log::info!("memorize epoch {epoch}: mean loss {:.6}", sum / examples.len() as f64);
        if done(epoch, model)? {
            return Ok(epoch);
        }
    }
    Ok(config.max_epochs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::TabularModel;
    use crate::objectives::Provenance;

    fn data(n_forget: usize, n_retain: usize) -> TrainingData {
        TrainingData {
            forget: (0..n_forget)
                .map(|i| ForgetExample {
                    question: format!("f{i}"),
                    gold_answer: Some("a".into()),
                    relabel: Some("idk".into()),
                    provenance: Provenance::OriginalRefusal,
                })
                .collect(),
            retain: (0..n_retain)
                .map(|i| RetainExample {
                    question: format!("r{i}"),
                    answer: "a".into(),
                    provenance: Provenance::OriginalRetain,
                })
                .collect(),
        }
    }

    fn config(reg: Regularizer) -> TrainConfig {
        TrainConfig::for_backend(BackendKind::Tabular, LossConfig::new(ForgetLoss::Nauf, reg))
    }

    #[test]
    fn batches_cover_forget_set_once() {
        let d = data(100, 7);
        let s = make_epoch_schedule(&d, &config(Regularizer::Gd), 1).unwrap();
        assert_eq!(s.iter().map(|b| b.forget.len()).collect::<Vec<_>>(), vec![32, 32, 32, 4]);
        assert_eq!(s.iter().map(|b| b.retain.len()).sum::<usize>(), 100);
        let mut seen: Vec<String> = s.iter().flat_map(|b| b.forget.iter().map(|e| e.question.clone())).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 100);
    }

    #[test]
    fn schedule_is_seeded() {
        let d = data(40, 40);
        let c = config(Regularizer::Kld);
        assert_eq!(make_epoch_schedule(&d, &c, 2).unwrap(), make_epoch_schedule(&d, &c, 2).unwrap());
        assert_ne!(make_epoch_schedule(&d, &c, 1).unwrap(), make_epoch_schedule(&d, &c, 2).unwrap());
    }

    #[test]
    fn regularizer_needs_retain_pool() {
        assert!(make_epoch_schedule(&data(3, 0), &config(Regularizer::Gd), 1).is_err());
        assert!(make_epoch_schedule(&data(3, 0), &config(Regularizer::None), 1).is_ok());
        assert!(make_epoch_schedule(&data(0, 3), &config(Regularizer::None), 1).is_err());
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let mut m = TabularModel::new(["f0".to_string()], ["a".to_string(), "idk".into()]).unwrap();
        m.set_logit("f0", "a", 2.0).unwrap();
        let frozen = Frozen::new(m.clone());
        let mut c = config(Regularizer::None);
        c.epochs = 0;
        let run = run_unlearning(&frozen, &data(1, 0), &c, |_, _| Ok(())).unwrap();
        assert_eq!(run.model.parameters(), m.parameters());
        assert!(run.trace.is_empty());
    }

    #[test]
    fn ga_without_guard_diverges() {
        let m = TabularModel::new(["f0".to_string()], ["a".to_string(), "idk".into()]).unwrap();
        let frozen = Frozen::new(m);
        let mut c = TrainConfig::for_backend(BackendKind::Tabular, LossConfig::new(ForgetLoss::Ga, Regularizer::None));
        c.epochs = 100_000;
        c.learning_rate = 50.0;
        c.divergence_threshold = 100.0;
        let err = run_unlearning(&frozen, &data(1, 0), &c, |_, _| Ok(())).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn trace_csv_round_trips() {
        let t = vec![TraceRecord {
            epoch: 1,
            step: 3,
            forget_term: -0.1,
            regularizer_term: 1e-20,
            total: 0.30000000000000004,
        }];
        assert_eq!(parse_trace_csv(&trace_to_csv(&t)).unwrap(), t);
    }
}
