//! Name-aware training data: refusal relabels and contrastive data
//! augmentation (CDA).
//!
//! Relabeling replaces the gold answer of every forget-set training question
//! with a refusal that names the protected individual (or, for the RGD/RDPO
//! baselines, with a generic uninformed answer).
//!
//! CDA borrows training questions from other individuals and swaps the
//! donor's name for the target's. Borrowed questions for a forget-set target
//! are answered with a refusal; for a retain-set target they are answered
//! with the original model's own greedy prediction, so the model learns to
//! tell the two groups apart by name.

mod templates;

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use templates::{instantiate_refusal, substitute_name, RefusalTemplateSet, TemplateKind, NAME_PLACEHOLDER};

use crate::backend::LanguageModel;
use crate::corpus::{Corpus, QaId, Side, SplitAssignment};
use crate::objectives::{ForgetExample, ForgetLoss, Provenance, RetainExample};
use crate::{parallel, util, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentedExample {
    pub target_name: String,
    pub donor_name: String,
    /// The donor question this example was built from.
    pub source: QaId,
    pub question: String,
    pub answer: String,
    pub side: Side,
    pub provenance: Provenance,
}

impl AugmentedExample {
    pub fn to_forget_example(&self) -> Option<ForgetExample> {
        (self.side == Side::Forget).then(|| ForgetExample {
            question: self.question.clone(),
            gold_answer: None,
            relabel: Some(self.answer.clone()),
            provenance: self.provenance,
        })
    }

    pub fn to_retain_example(&self) -> Option<RetainExample> {
        (self.side == Side::Retain).then(|| RetainExample {
            question: self.question.clone(),
            answer: self.answer.clone(),
            provenance: self.provenance,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AugmentOptions {
    /// Borrowed questions per individual; `None` doubles each individual's
    /// training questions.
    pub per_person: Option<usize>,
    pub seed: u64,
}

struct Donor<'a> {
    id: QaId,
    name: &'a str,
    question: &'a str,
}

fn donor_pool<'a>(split: &SplitAssignment, corpus: &'a Corpus) -> Result<Vec<Donor<'a>>> {
    let mut pool = Vec::new();
    for side in [Side::Forget, Side::Retain] {
        for id in split.train_ids(side) {
            let record = corpus
                .get(&id.owner)
                .ok_or_else(|| Error::InvalidArgument(format!("split names {:?}, which is not in the corpus", id.owner)))?;
            let qa = corpus
                .qa(&id)
                .ok_or_else(|| Error::InvalidArgument(format!("split references missing question {id}")))?;
            pool.push(Donor {
                name: &record.name,
                question: &qa.question,
                id,
            });
        }
    }
    Ok(pool)
}

/// Borrowed, name-substituted questions for every individual in `split`.
///
/// Donors are other individuals' training questions. A donor is skipped when
/// its name occurs inside the target's name (the substituted question would
/// still mention the donor) or when the substituted question is already one
/// of the target's own questions. Each target draws from its pool without
/// replacement, reshuffling once the pool is used up.
pub fn augment<M: LanguageModel>(
    split: &SplitAssignment,
    corpus: &Corpus,
    model_o: &M,
    refusals: &RefusalTemplateSet,
    options: AugmentOptions,
) -> Result<Vec<AugmentedExample>> {
    if split.all_names().count() < 2 {
        return Err(Error::InvalidArgument("augmentation needs at least two individuals to borrow questions from".into()));
    }
    if options.per_person == Some(0) {
        return Ok(Vec::new());
    }
    let pool = donor_pool(split, corpus)?;
    let targets: Vec<(&String, Side)> = split
        .forget_names
        .iter()
        .map(|n| (n, Side::Forget))
        .chain(split.retain_names.iter().map(|n| (n, Side::Retain)))
        .collect();

    let per_target = parallel::try_map_collect(&targets, |&(target, side)| {
        let record = corpus
            .get(target)
            .ok_or_else(|| Error::InvalidArgument(format!("split names {target:?}, which is not in the corpus")))?;
        let own: HashSet<&str> = record.qa_pairs.iter().map(|q| q.question.as_str()).collect();
        let want = match options.per_person {
            Some(n) => n,
            None => split.halves.get(target).map_or(0, |h| h.train.len()),
        };
        let mut candidates: Vec<(&Donor, String)> = Vec::new();
        for d in &pool {
            if d.name == target.as_str() || target.contains(d.name) {
                continue;
            }
            let q = substitute_name(d.question, d.name, target).map_err(|e| e.context(format!("donor question {}", d.id)))?;
            if !own.contains(q.as_str()) {
                candidates.push((d, q));
            }
        }
        if candidates.is_empty() && want > 0 {
            return Err(Error::InvalidArgument(format!("no donor questions available for {target:?}")));
        }

        let mut rng = util::derived_rng(options.seed, &format!("cda/{target}"));
        let mut order: Vec<usize> = Vec::new();
        let mut out = Vec::with_capacity(want);
        for _ in 0..want {
            if order.is_empty() {
                order = (0..candidates.len()).collect();
                order.shuffle(&mut rng);
                order.reverse();
            }
            let (donor, question) = &candidates[order.pop().unwrap()];
            let (answer, provenance) = match side {
                Side::Forget => (instantiate_refusal(refusals, target, &mut rng), Provenance::CdaForgetRefusal),
                Side::Retain => (
                    model_o
                        .generate(question)
                        .map_err(|e| e.context(format!("self-labeling {question:?}")))?,
                    Provenance::CdaRetainSelflabel,
                ),
            };
            out.push(AugmentedExample {
                target_name: target.clone(),
                donor_name: donor.name.to_string(),
                source: donor.id.clone(),
                question: question.clone(),
                answer,
                side,
                provenance,
            });
        }
        Ok(out)
    })?;
    Ok(per_target.into_iter().flatten().collect())
}

/// JSON lines, one example per line.
pub fn augmented_to_jsonl(examples: &[AugmentedExample]) -> String {
    let mut out = String::new();
    for e in examples {
        out.push_str(&serde_json::to_string(e).expect("example serializes"));
        out.push('\n');
    }
    out
}

pub fn save_augmented(examples: &[AugmentedExample], path: impl AsRef<Path>) -> Result<()> {
    util::write_file(path.as_ref(), augmented_to_jsonl(examples))
}

pub fn load_augmented(path: impl AsRef<Path>) -> Result<Vec<AugmentedExample>> {
    let path = path.as_ref();
    let text = util::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Forget-set training examples for `loss`.
///
/// GA and NPO train on gold answers only. RGD and RDPO get an uninformed
/// relabel, NAUF a name-aware refusal; `relabels` must be of the matching
/// kind. Each relabel is drawn once, from a stream keyed by the run seed and
/// the question id, so it does not depend on iteration order.
pub fn forget_examples(
    split: &SplitAssignment,
    corpus: &Corpus,
    loss: ForgetLoss,
    relabels: &RefusalTemplateSet,
    seed: u64,
) -> Result<Vec<ForgetExample>> {
    if loss.needs_relabel() {
        let expected = if loss == ForgetLoss::Nauf {
            TemplateKind::NameAware
        } else {
            TemplateKind::Uninformed
        };
        if relabels.kind() != expected {
            return Err(Error::Config(format!("{loss} relabels need {expected} templates, got {}", relabels.kind())));
        }
    }
    split
        .train_ids(Side::Forget)
        .into_iter()
        .map(|id| {
            let qa = corpus
                .qa(&id)
                .ok_or_else(|| Error::InvalidArgument(format!("split references missing question {id}")))?;
            let relabel = loss.needs_relabel().then(|| {
                let mut rng = util::derived_rng(seed, &format!("relabel/{id}"));
                instantiate_refusal(relabels, &id.owner, &mut rng)
            });
            Ok(ForgetExample {
                question: qa.question.clone(),
                gold_answer: Some(qa.gold_answer.clone()),
                provenance: if relabel.is_some() {
                    Provenance::OriginalRefusal
                } else {
                    Provenance::OriginalForget
                },
                relabel,
            })
        })
        .collect()
}

/// Retain-set training questions with their gold answers.
pub fn retain_examples(split: &SplitAssignment, corpus: &Corpus) -> Result<Vec<RetainExample>> {
    split
        .train_ids(Side::Retain)
        .into_iter()
        .map(|id| {
            let qa = corpus
                .qa(&id)
                .ok_or_else(|| Error::InvalidArgument(format!("split references missing question {id}")))?;
            Ok(RetainExample {
                question: qa.question.clone(),
                answer: qa.gold_answer.clone(),
                provenance: Provenance::OriginalRetain,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{NeuralConfig, TinyNeuralModel, Vocabulary};
    use crate::corpus::{generate_synthetic_corpus, make_split, CorpusPolicy, Ratio};

    fn fixture(n: usize) -> (Corpus, SplitAssignment) {
        let corpus = Corpus::from_records(generate_synthetic_corpus(n, 20, 5).unwrap(), &CorpusPolicy::default()).unwrap();
        let split = make_split(&corpus.eligible(), Ratio::new(1, 4).unwrap(), 9).unwrap();
        (corpus, split)
    }

    fn model(corpus: &Corpus) -> TinyNeuralModel {
        let texts: Vec<&str> = corpus
            .records
            .iter()
            .flat_map(|r| r.qa_pairs.iter().flat_map(|q| [q.question.as_str(), q.gold_answer.as_str()]))
            .collect();
        TinyNeuralModel::new(
            Vocabulary::build(texts),
            NeuralConfig {
                hidden: 8,
                max_answer_tokens: 3,
                ..NeuralConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn per_person_zero_is_empty() {
        let (corpus, split) = fixture(8);
        let m = model(&corpus);
        let opts = AugmentOptions {
            per_person: Some(0),
            seed: 1,
        };
        assert!(augment(&split, &corpus, &m, &RefusalTemplateSet::name_aware(), opts).unwrap().is_empty());
    }

    #[test]
    fn default_doubles_training_questions() {
        let (corpus, split) = fixture(8);
        let m = model(&corpus);
        let aug = augment(&split, &corpus, &m, &RefusalTemplateSet::name_aware(), AugmentOptions { per_person: None, seed: 1 }).unwrap();
        for name in split.all_names() {
            let n = aug.iter().filter(|e| &e.target_name == name).count();
            assert_eq!(n, split.halves[name].train.len());
        }
    }

    #[test]
    fn augmented_file_round_trips() {
        let (corpus, split) = fixture(6);
        let m = model(&corpus);
        let aug = augment(&split, &corpus, &m, &RefusalTemplateSet::name_aware(), AugmentOptions { per_person: Some(3), seed: 2 }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("aug.jsonl");
        save_augmented(&aug, &path).unwrap();
        assert_eq!(load_augmented(&path).unwrap(), aug);
    }

    #[test]
    fn relabel_kind_must_match_loss() {
        let (corpus, split) = fixture(6);
        assert!(forget_examples(&split, &corpus, ForgetLoss::Nauf, &RefusalTemplateSet::uninformed(), 0).is_err());
        assert!(forget_examples(&split, &corpus, ForgetLoss::Rgd, &RefusalTemplateSet::name_aware(), 0).is_err());
        let ga = forget_examples(&split, &corpus, ForgetLoss::Ga, &RefusalTemplateSet::name_aware(), 0).unwrap();
        assert!(ga.iter().all(|e| e.relabel.is_none() && e.provenance == Provenance::OriginalForget));
    }

    #[test]
    fn nauf_relabels_name_the_owner() {
        let (corpus, split) = fixture(6);
        let ex = forget_examples(&split, &corpus, ForgetLoss::Nauf, &RefusalTemplateSet::name_aware(), 0).unwrap();
        for (e, id) in ex.iter().zip(split.train_ids(Side::Forget)) {
            assert!(e.relabel.as_ref().unwrap().contains(&id.owner));
        }
    }
}
