use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::backend::LanguageModel;
use crate::objectives::{Provenance, RetainExample};
use crate::{parallel, util, Error, Result};

/// A multiple-choice question answered by picking the most likely choice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeItem {
    pub question: String,
    pub choices: Vec<String>,
    pub answer: usize,
}

/// A general-capability check that does not involve any individual.
pub trait ProbeTask: Send + Sync {
    fn name(&self) -> &str;

    fn items(&self) -> &[ProbeItem];
}

/// Fraction of items whose correct choice has the highest log-likelihood
/// (ties go to the earliest choice).
pub fn probe_accuracy<M: LanguageModel>(model: &M, task: &dyn ProbeTask) -> Result<f64> {
    let items = task.items();
    if items.is_empty() {
        return Err(Error::EmptyBatch("probe task has no items"));
    }
    let hits = parallel::try_map_collect(items, |item| {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, c) in item.choices.iter().enumerate() {
            let ll = model
                .answer_log_likelihood(&item.question, c)
                .map_err(|e| e.context(format!("probe {} item {:?}", task.name(), item.question)))?;
            if ll > best.1 {
                best = (i, ll);
            }
        }
        Ok(best.0 == item.answer)
    })?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / items.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticProbe {
    name: String,
    items: Vec<ProbeItem>,
}

impl ProbeTask for SyntheticProbe {
    fn name(&self) -> &str {
        &self.name
    }

    fn items(&self) -> &[ProbeItem] {
        &self.items
    }
}

const REALMS: &[(&str, &str)] = &[
    ("Arvandia", "Velspar"),
    ("Borelia", "Quindle"),
    ("Castramar", "Ostrevin"),
    ("Dravonia", "Pellucid"),
    ("Elsqueth", "Marrowgate"),
    ("Fenwyrd", "Glimmerholt"),
    ("Galdoria", "Sunnereach"),
    ("Hesperine", "Tollamere"),
    ("Ilvareth", "Crestwold"),
    ("Jorvania", "Bellhaven"),
    ("Kestramoor", "Duskmere"),
    ("Lunderra", "Highcairn"),
    ("Maravost", "Ebonreach"),
    ("Norvallis", "Silvercombe"),
    ("Orlanthe", "Westmarch"),
    ("Pravenna", "Coldharbour"),
];

const NUMBERS: &[&str] = &[
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen",
];

fn with_distractors(correct: &str, pool: &[&str], label: &str, seed: u64) -> (Vec<String>, usize) {
    let mut rng = util::derived_rng(seed, label);
    let mut others: Vec<&str> = pool.iter().copied().filter(|p| *p != correct).collect();
    others.shuffle(&mut rng);
    let mut choices: Vec<String> = others.into_iter().take(3).map(String::from).collect();
    choices.push(correct.to_string());
    choices.shuffle(&mut rng);
    let answer = choices.iter().position(|c| c == correct).unwrap();
    (choices, answer)
}

impl SyntheticProbe {
    pub fn new(name: impl Into<String>, items: Vec<ProbeItem>) -> Result<Self> {
        for (i, item) in items.iter().enumerate() {
            if item.answer >= item.choices.len() {
                return Err(Error::InvalidArgument(format!("probe item {i} has answer index out of range")));
            }
        }
        Ok(Self { name: name.into(), items })
    }

    /// Capitals of invented countries.
    pub fn geography(seed: u64) -> Self {
        let capitals: Vec<&str> = REALMS.iter().map(|(_, c)| *c).collect();
        let items = REALMS
            .iter()
            .map(|(realm, capital)| {
                let (choices, answer) = with_distractors(capital, &capitals, &format!("probe/geography/{realm}"), seed);
                ProbeItem {
                    question: format!("What is the capital of {realm}?"),
                    choices,
                    answer,
                }
            })
            .collect();
        Self {
            name: "geography".into(),
            items,
        }
    }

    /// Sums of small numbers written as words.
    pub fn arithmetic(seed: u64) -> Self {
        let mut items = Vec::new();
        for a in 1..=9usize {
            for b in [a, 9 - a / 2] {
                let (choices, answer) =
                    with_distractors(NUMBERS[a + b], NUMBERS, &format!("probe/arithmetic/{a}+{b}"), seed);
                items.push(ProbeItem {
                    question: format!("What is {} plus {}?", NUMBERS[a], NUMBERS[b]),
                    choices,
                    answer,
                });
            }
        }
        items.dedup_by(|x, y| x.question == y.question);
        Self {
            name: "arithmetic".into(),
            items,
        }
    }

    /// The default probe suite.
    pub fn standard(seed: u64) -> Vec<SyntheticProbe> {
        vec![Self::geography(seed), Self::arithmetic(seed)]
    }

    /// Question/answer pairs teaching the probe facts, used when building a
    /// base model.
    pub fn training_examples(&self) -> Vec<RetainExample> {
        self.items
            .iter()
            .map(|it| RetainExample {
                question: it.question.clone(),
                answer: it.choices[it.answer].clone(),
                provenance: Provenance::OriginalRetain,
            })
            .collect()
    }

    /// Every question and choice text, for vocabulary building.
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.items
            .iter()
            .flat_map(|it| std::iter::once(it.question.as_str()).chain(it.choices.iter().map(String::as_str)))
    }
}
