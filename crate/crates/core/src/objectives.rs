//! Forgetting losses and retain-set regularizers.
//!
//! Every loss is a mean over its examples and uses natural logarithms.
//! Minimizing a loss by gradient descent performs the intended update, so
//! [`loss_ga`] is `+mean log M_u(y|x)`.
//!
//! | forget loss | per example                                                   |
//! |-------------|---------------------------------------------------------------|
//! | GA          | `log M_u(y|x)`                                                |
//! | NPO         | `(2/β) log(1 + (M_u(y|x) / M_o(y|x))^β)`                      |
//! | RGD         | `-log M_u(y_idk|x)`                                           |
//! | RDPO        | `-log σ(β log(M_u/M_o)(y_idk|x) - β log(M_u/M_o)(y|x))`       |
//! | NAUF        | RGD's form on name-aware refusal relabels                     |
//!
//! | regularizer | per example                          |
//! |-------------|--------------------------------------|
//! | GD          | `-log M_u(y|x)`                      |
//! | KLD         | `KL(M_o(·|x) ‖ M_u(·|x))`            |
//!
//! Gradients are accumulated over fixed-size chunks of examples, chunks in
//! parallel, and the chunk results summed in order. The chunking does not
//! depend on the thread count, so results are bit-identical across
//! [`ExecMode`](crate::parallel::ExecMode)s.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::backend::{GradientBuffer, LanguageModel};
use crate::util::{sigmoid, softplus};
use crate::{parallel, Error, Result};

/// Probability floor inside NPO/RDPO ratios.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

const CHUNK: usize = 8;

static CLAMP_EVENTS: AtomicU64 = AtomicU64::new(0);

/// Number of log-probabilities raised to [`PROBABILITY_FLOOR`] since process
/// start.
pub fn clamp_events() -> u64 {
    CLAMP_EVENTS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForgetLoss {
    Ga,
    Npo,
    Rgd,
    Rdpo,
    Nauf,
}

impl ForgetLoss {
    pub const ALL: [ForgetLoss; 5] = [ForgetLoss::Ga, ForgetLoss::Npo, ForgetLoss::Rgd, ForgetLoss::Rdpo, ForgetLoss::Nauf];

    pub fn uses_reference(self) -> bool {
        matches!(self, ForgetLoss::Npo | ForgetLoss::Rdpo)
    }

    pub fn needs_gold(self) -> bool {
        matches!(self, ForgetLoss::Ga | ForgetLoss::Npo | ForgetLoss::Rdpo)
    }

    pub fn needs_relabel(self) -> bool {
        matches!(self, ForgetLoss::Rgd | ForgetLoss::Rdpo | ForgetLoss::Nauf)
    }

    pub fn uses_beta(self) -> bool {
        self.uses_reference()
    }
}

impl fmt::Display for ForgetLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ForgetLoss::Ga => "GA",
            ForgetLoss::Npo => "NPO",
            ForgetLoss::Rgd => "RGD",
            ForgetLoss::Rdpo => "RDPO",
            ForgetLoss::Nauf => "NAUF",
        })
    }
}

impl FromStr for ForgetLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ga" => Ok(ForgetLoss::Ga),
            "npo" => Ok(ForgetLoss::Npo),
            "rgd" => Ok(ForgetLoss::Rgd),
            "rdpo" => Ok(ForgetLoss::Rdpo),
            "nauf" => Ok(ForgetLoss::Nauf),
            _ => Err(Error::Config(format!("unknown forget loss {s:?} (expected ga, npo, rgd, rdpo or nauf)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularizer {
    #[default]
    None,
    Gd,
    Kld,
}

impl Regularizer {
    pub fn is_active(self) -> bool {
        self != Regularizer::None
    }
}

impl fmt::Display for Regularizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regularizer::None => "none",
            Regularizer::Gd => "GD",
            Regularizer::Kld => "KLD",
        })
    }
}

impl FromStr for Regularizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Regularizer::None),
            "gd" => Ok(Regularizer::Gd),
            "kld" => Ok(Regularizer::Kld),
            _ => Err(Error::Config(format!("unknown regularizer {s:?} (expected none, gd or kld)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub forget_loss: ForgetLoss,
    pub regularizer: Regularizer,
    pub beta: f64,
    pub forget_weight: f64,
    pub regularizer_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            forget_loss: ForgetLoss::Nauf,
            regularizer: Regularizer::None,
            beta: 0.1,
            forget_weight: 1.0,
            regularizer_weight: 1.0,
        }
    }
}

impl LossConfig {
    pub fn new(forget_loss: ForgetLoss, regularizer: Regularizer) -> Self {
        Self {
            forget_loss,
            regularizer,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.forget_loss.uses_beta() && !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive for {}, got {}", self.forget_loss, self.beta)));
        }
        for (name, w) in [("forget_weight", self.forget_weight), ("regularizer_weight", self.regularizer_weight)] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Config(format!("{name} must be a finite non-negative number, got {w}")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for LossConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.regularizer {
            Regularizer::None => write!(f, "{}", self.forget_loss),
            r => write!(f, "{}+{}", self.forget_loss, r),
        }
    }
}

/// Where a training example came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    /// Forget-set question with its gold answer only.
    OriginalForget,
    /// Forget-set question relabeled with a refusal or uninformed answer.
    OriginalRefusal,
    OriginalRetain,
    CdaForgetRefusal,
    CdaRetainSelflabel,
}

impl Provenance {
    pub fn is_augmented(self) -> bool {
        matches!(self, Provenance::CdaForgetRefusal | Provenance::CdaRetainSelflabel)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgetExample {
    pub question: String,
    pub gold_answer: Option<String>,
    pub relabel: Option<String>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetainExample {
    pub question: String,
    pub answer: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBatch {
    pub forget: Vec<ForgetExample>,
    pub retain: Vec<RetainExample>,
}

/// Value of each term of a combined loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub forget: f64,
    pub regularizer: f64,
    pub total: f64,
}

fn gold(e: &ForgetExample, index: usize) -> Result<&str> {
    e.gold_answer.as_deref().ok_or(Error::MissingField {
        field: "gold_answer",
        index,
    })
}

fn relabel(e: &ForgetExample, index: usize) -> Result<&str> {
    e.relabel.as_deref().ok_or(Error::MissingField { field: "relabel", index })
}

fn finite(ll: f64, what: &str) -> Result<f64> {
    if ll.is_finite() {
        Ok(ll)
    } else {
        Err(Error::NonFinite(format!("{what} = {ll}")))
    }
}

/// Raises `ll` to `ln(PROBABILITY_FLOOR)`; the flag says whether it did.
fn floor_log_prob(ll: f64) -> (f64, bool) {
    let floor = PROBABILITY_FLOOR.ln();
    if ll < floor {
        let n = CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed) + 1;
        if n.is_power_of_two() {
            log::warn!("probability clamped to {PROBABILITY_FLOOR:e} inside a ratio loss ({n} clamps so far)");
        }
        (floor, true)
    } else {
        (ll, false)
    }
}

/// Sums `per_item(example, index, grad)` over fixed chunks and divides by the
/// example count. `per_item` adds its unscaled gradient when `grad` is given.
fn mean_over<M, T, F>(model: &M, items: &[T], what: &'static str, with_grad: bool, per_item: F) -> Result<(f64, M::Gradient)>
where
    M: LanguageModel,
    T: Sync,
    F: Fn(&T, usize, Option<&mut M::Gradient>) -> Result<f64> + Sync + Send,
{
    if items.is_empty() {
        return Err(Error::EmptyBatch(what));
    }
    let starts: Vec<usize> = (0..items.len()).step_by(CHUNK).collect();
    let partial = parallel::try_map_collect(&starts, |&start| {
        let mut g = with_grad.then(|| model.zero_gradient());
        let mut sum = 0.0;
        for (i, item) in items.iter().enumerate().skip(start).take(CHUNK) {
            sum += per_item(item, i, g.as_mut())?;
        }
        Ok((sum, g))
    })?;
    let mut total = 0.0;
    let mut grad = model.zero_gradient();
    for (sum, g) in partial {
        total += sum;
        if let Some(g) = g {
            grad.add_scaled(&g, 1.0);
        }
    }
    let n = items.len() as f64;
    grad.scale(1.0 / n);
    Ok((total / n, grad))
}

fn add_ll<M: LanguageModel>(model: &M, q: &str, a: &str, grad: Option<&mut M::Gradient>, w: f64) -> Result<f64> {
    match grad {
        Some(g) => model.accumulate_log_likelihood(q, a, g, |_| Ok(w)),
        None => model.answer_log_likelihood(q, a),
    }
}

fn npo_example<M: LanguageModel>(
    model: &M,
    reference: &M,
    q: &str,
    y: &str,
    beta: f64,
    grad: Option<&mut M::Gradient>,
) -> Result<f64> {
    let (ll_o, _) = floor_log_prob(finite(reference.answer_log_likelihood(q, y)?, "log M_o(y|x)")?);
    let mut value = 0.0;
    let mut weight = |ll_u: f64| {
        let (ll_u, clamped) = floor_log_prob(finite(ll_u, "log M_u(y|x)")?);
        let d = beta * (ll_u - ll_o);
        value = 2.0 / beta * softplus(d);
        Ok(if clamped { 0.0 } else { 2.0 * sigmoid(d) })
    };
    match grad {
        Some(g) => {
            model.accumulate_log_likelihood(q, y, g, weight)?;
        }
        None => {
            let ll_u = model.answer_log_likelihood(q, y)?;
            weight(ll_u)?;
        }
    }
    Ok(value)
}

fn rdpo_example<M: LanguageModel>(
    model: &M,
    reference: &M,
    q: &str,
    y: &str,
    idk: &str,
    beta: f64,
    grad: Option<&mut M::Gradient>,
) -> Result<f64> {
    let (o_y, _) = floor_log_prob(finite(reference.answer_log_likelihood(q, y)?, "log M_o(y|x)")?);
    let (o_idk, _) = floor_log_prob(finite(reference.answer_log_likelihood(q, idk)?, "log M_o(y_idk|x)")?);
    let (u_y, y_clamped) = floor_log_prob(finite(model.answer_log_likelihood(q, y)?, "log M_u(y|x)")?);
    let margin = |u_idk: f64| beta * (u_idk - o_idk) - beta * (u_y - o_y);
    match grad {
        None => {
            let (u_idk, _) = floor_log_prob(finite(model.answer_log_likelihood(q, idk)?, "log M_u(y_idk|x)")?);
            Ok(softplus(-margin(u_idk)))
        }
        Some(g) => {
            // d/dm softplus(-m) = -σ(-m)
            let mut coef = 0.0;
            let mut value = 0.0;
            model.accumulate_log_likelihood(q, idk, g, |ll| {
                let (u_idk, clamped) = floor_log_prob(finite(ll, "log M_u(y_idk|x)")?);
                let m = margin(u_idk);
                value = softplus(-m);
                coef = sigmoid(-m);
                Ok(if clamped { 0.0 } else { -coef * beta })
            })?;
            if !y_clamped {
                model.accumulate_log_likelihood(q, y, g, |_| Ok(coef * beta))?;
            }
            Ok(value)
        }
    }
}

fn forget_term<M: LanguageModel>(
    loss: ForgetLoss,
    beta: f64,
    model: &M,
    reference: Option<&M>,
    examples: &[ForgetExample],
    with_grad: bool,
) -> Result<(f64, M::Gradient)> {
    if loss.uses_beta() && !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    let reference = match (loss.uses_reference(), reference) {
        (true, None) => return Err(Error::InvalidArgument(format!("{loss} needs a reference model"))),
        (_, r) => r,
    };
    mean_over(model, examples, "forget examples", with_grad, |e, i, g| match loss {
        ForgetLoss::Ga => add_ll(model, &e.question, gold(e, i)?, g, 1.0),
        ForgetLoss::Rgd | ForgetLoss::Nauf => Ok(-add_ll(model, &e.question, relabel(e, i)?, g, -1.0)?),
        ForgetLoss::Npo => npo_example(model, reference.unwrap(), &e.question, gold(e, i)?, beta, g),
        ForgetLoss::Rdpo => rdpo_example(model, reference.unwrap(), &e.question, gold(e, i)?, relabel(e, i)?, beta, g),
    })
}

fn regularizer_term<M: LanguageModel>(
    kind: Regularizer,
    model: &M,
    reference: Option<&M>,
    examples: &[RetainExample],
    with_grad: bool,
) -> Result<(f64, M::Gradient)> {
    match kind {
        Regularizer::None => Ok((0.0, model.zero_gradient())),
        Regularizer::Gd => mean_over(model, examples, "retain examples", with_grad, |e, _, g| {
            Ok(-add_ll(model, &e.question, &e.answer, g, -1.0)?)
        }),
        Regularizer::Kld => {
            let reference = reference.ok_or_else(|| Error::InvalidArgument("KLD needs a reference model".into()))?;
            mean_over(model, examples, "retain examples", with_grad, |e, _, g| match g {
                Some(g) => model.accumulate_kl_from_reference(reference, &e.question, &e.answer, 1.0, g),
                None => model.kl_from_reference(reference, &e.question, &e.answer),
            })
        }
    }
}

/// `mean log M_u(y|x)` over gold answers.
pub fn loss_ga<M: LanguageModel>(model: &M, examples: &[ForgetExample]) -> Result<f64> {
    Ok(forget_term(ForgetLoss::Ga, 0.0, model, None, examples, false)?.0)
}

pub fn loss_npo<M: LanguageModel>(model: &M, reference: &M, examples: &[ForgetExample], beta: f64) -> Result<f64> {
    Ok(forget_term(ForgetLoss::Npo, beta, model, Some(reference), examples, false)?.0)
}

pub fn loss_rgd<M: LanguageModel>(model: &M, examples: &[ForgetExample]) -> Result<f64> {
    Ok(forget_term(ForgetLoss::Rgd, 0.0, model, None, examples, false)?.0)
}

pub fn loss_rdpo<M: LanguageModel>(model: &M, reference: &M, examples: &[ForgetExample], beta: f64) -> Result<f64> {
    Ok(forget_term(ForgetLoss::Rdpo, beta, model, Some(reference), examples, false)?.0)
}

/// NAUF's forget term: RGD over name-aware refusal relabels.
pub fn loss_nauf<M: LanguageModel>(model: &M, examples: &[ForgetExample]) -> Result<f64> {
    Ok(forget_term(ForgetLoss::Nauf, 0.0, model, None, examples, false)?.0)
}

pub fn loss_gd_reg<M: LanguageModel>(model: &M, examples: &[RetainExample]) -> Result<f64> {
    Ok(regularizer_term(Regularizer::Gd, model, None, examples, false)?.0)
}

pub fn loss_kld_reg<M: LanguageModel>(model: &M, reference: &M, examples: &[RetainExample]) -> Result<f64> {
    Ok(regularizer_term(Regularizer::Kld, model, Some(reference), examples, false)?.0)
}

/// A forget loss and its gradient with respect to `model`'s parameters.
pub fn forget_loss_gradient<M: LanguageModel>(
    loss: ForgetLoss,
    beta: f64,
    model: &M,
    reference: &M,
    examples: &[ForgetExample],
) -> Result<(f64, M::Gradient)> {
    forget_term(loss, beta, model, Some(reference), examples, true)
}

pub fn regularizer_gradient<M: LanguageModel>(
    kind: Regularizer,
    model: &M,
    reference: &M,
    examples: &[RetainExample],
) -> Result<(f64, M::Gradient)> {
    regularizer_term(kind, model, Some(reference), examples, true)
}

fn check_batch(config: &LossConfig, batch: &LossBatch) -> Result<()> {
    config.validate()?;
    for (i, e) in batch.forget.iter().enumerate() {
        if config.forget_loss.needs_gold() {
            gold(e, i)?;
        }
        if config.forget_loss.needs_relabel() {
            relabel(e, i)?;
        }
    }
    if config.regularizer.is_active() && batch.retain.len() != batch.forget.len() {
        return Err(Error::InvalidArgument(format!(
            "{} regularizer pairs one retain example with each forget example; got {} retain for {} forget",
            config.regularizer,
            batch.retain.len(),
            batch.forget.len()
        )));
    }
    Ok(())
}

fn combined<M: LanguageModel>(
    config: &LossConfig,
    model: &M,
    reference: &M,
    batch: &LossBatch,
    with_grad: bool,
) -> Result<(LossTerms, M::Gradient)> {
    check_batch(config, batch)?;
    let (f, mut grad) = forget_term(config.forget_loss, config.beta, model, Some(reference), &batch.forget, with_grad)?;
    grad.scale(config.forget_weight);
    let r = if config.regularizer.is_active() {
        let (r, gr) = regularizer_term(config.regularizer, model, Some(reference), &batch.retain, with_grad)?;
        grad.add_scaled(&gr, config.regularizer_weight);
        r
    } else {
        0.0
    };
    let total = config.forget_weight * f + config.regularizer_weight * r;
    Ok((
        LossTerms {
            forget: f,
            regularizer: r,
            total,
        },
        grad,
    ))
}

/// `forget_weight * forget term + regularizer_weight * regularizer term`.
pub fn combined_loss<M: LanguageModel>(config: &LossConfig, model: &M, reference: &M, batch: &LossBatch) -> Result<LossTerms> {
    Ok(combined(config, model, reference, batch, false)?.0)
}

pub fn combined_loss_gradient<M: LanguageModel>(
    config: &LossConfig,
    model: &M,
    reference: &M,
    batch: &LossBatch,
) -> Result<(LossTerms, M::Gradient)> {
    combined(config, model, reference, batch, true)
}
