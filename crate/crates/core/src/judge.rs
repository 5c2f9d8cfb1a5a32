//! Answer correctness verdicts.
//!
//! A prediction counts as correct when the judge labels it entailment or
//! neutral against the gold answer; only a contradiction is wrong.
//!
//! [`ExactMatchJudge`] is the self-contained judge: it normalizes both
//! strings (lowercase, no punctuation, no articles) and labels equal strings
//! entailment, strings with no content token in common contradiction, and
//! anything in between neutral. [`HttpNliJudge`] forwards the pair to an
//! external NLI service.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backend::LanguageModel;
use crate::corpus::{QaId, QaPair};
use crate::{parallel, util, Error, Result};

/// Environment variable naming the NLI endpoint used by [`HttpNliJudge::from_env`].
pub const NLI_URL_ENV: &str = "UNLEARN_NLI_URL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Entailment,
    Neutral,
    Contradiction,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Entailment => "entailment",
            Label::Neutral => "neutral",
            Label::Contradiction => "contradiction",
        })
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "entailment" => Ok(Label::Entailment),
            "neutral" => Ok(Label::Neutral),
            "contradiction" => Ok(Label::Contradiction),
            other => Err(Error::JudgeUnavailable(format!("unrecognized label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: Label,
    pub correct: bool,
}

impl From<Label> for Verdict {
    fn from(label: Label) -> Self {
        Verdict {
            label,
            correct: label != Label::Contradiction,
        }
    }
}

/// A judge is stateless after construction and may be shared across threads.
pub trait Judge: Send + Sync {
    fn name(&self) -> &str;

    fn label(&self, question: &str, gold: &str, predicted: &str) -> Result<Label>;
}

pub fn judge_answer(judge: &dyn Judge, question: &str, gold: &str, predicted: &str) -> Result<Verdict> {
    if gold.trim().is_empty() {
        return Err(Error::InvalidArgument(format!("empty gold answer for question {question:?}")));
    }
    judge.label(question, gold, predicted).map(Verdict::from)
}

const ARTICLES: &[&str] = &["a", "an", "the"];
const FUNCTION_WORDS: &[&str] = &[
    "and", "or", "of", "in", "on", "at", "to", "for", "with", "by", "from", "is", "was", "are", "were", "be", "as",
];

/// Lowercase, drop punctuation and articles, collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lowered: String = s
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation() && !matches!(c, '‘' | '’' | '“' | '”'))
        .collect();
    lowered
        .split_whitespace()
        .filter(|w| !ARTICLES.contains(w))
        .collect::<Vec<_>>()
        .join(" ")
}

fn content_tokens(normalized: &str) -> HashSet<&str> {
    normalized
        .split_whitespace()
        .filter(|w| !FUNCTION_WORDS.contains(w))
        .collect()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatchJudge;

impl Judge for ExactMatchJudge {
    fn name(&self) -> &str {
        "exact-match"
    }

    fn label(&self, _question: &str, gold: &str, predicted: &str) -> Result<Label> {
        let g = normalize_answer(gold);
        let p = normalize_answer(predicted);
        if g == p {
            return Ok(Label::Entailment);
        }
        let gt = content_tokens(&g);
        if content_tokens(&p).is_disjoint(&gt) {
            Ok(Label::Contradiction)
        } else {
            Ok(Label::Neutral)
        }
    }
}

/// Client for an NLI service.
///
/// Sends `POST <url>` with `{"premise": gold, "hypothesis": predicted,
/// "question": question}` and expects `{"label": "entailment" | "neutral" |
/// "contradiction"}`. Any transport or decoding failure is reported as
/// [`Error::JudgeUnavailable`].
pub struct HttpNliJudge {
    url: String,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct NliRequest<'a> {
    premise: &'a str,
    hypothesis: &'a str,
    question: &'a str,
}

#[derive(Deserialize)]
struct NliResponse {
    label: String,
}

impl HttpNliJudge {
    pub fn new(url: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        Self { url: url.into(), agent }
    }

    pub fn from_env() -> Result<Self> {
        match std::env::var(NLI_URL_ENV) {
            Ok(url) if !url.trim().is_empty() => Ok(Self::new(url)),
            _ => Err(Error::JudgeUnavailable(format!("{NLI_URL_ENV} is not set"))),
        }
    }
}

impl Judge for HttpNliJudge {
    fn name(&self) -> &str {
        "nli"
    }

    fn label(&self, question: &str, gold: &str, predicted: &str) -> Result<Label> {
        let unavailable = |e: &dyn fmt::Display| Error::JudgeUnavailable(format!("{}: {e}", self.url));
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(NliRequest {
                premise: gold,
                hypothesis: predicted,
                question,
            })
            .map_err(|e| unavailable(&e))?;
        let body: NliResponse = resp.body_mut().read_json().map_err(|e| unavailable(&e))?;
        body.label.parse()
    }
}

/// One judged prediction, as written to the audit table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub id: QaId,
    pub question: String,
    pub gold: String,
    pub predicted: String,
    pub label: Label,
    pub correct: bool,
}

/// Generates and judges an answer for every pair, in input order.
pub fn judge_predictions<M: LanguageModel>(judge: &dyn Judge, model: &M, items: &[(QaId, &QaPair)]) -> Result<Vec<VerdictRecord>> {
    parallel::try_map_collect(items, |(id, qa)| {
        let predicted = model
            .generate(&qa.question)
            .map_err(|e| e.context(format!("generating an answer for {id}")))?;
        let verdict = judge_answer(judge, &qa.question, &qa.gold_answer, &predicted)
            .map_err(|e| e.context(format!("judging {id}")))?;
        Ok(VerdictRecord {
            id: id.clone(),
            question: qa.question.clone(),
            gold: qa.gold_answer.clone(),
            predicted,
            label: verdict.label,
            correct: verdict.correct,
        })
    })
}

/// Fraction of records judged correct.
pub fn fraction_correct(records: &[VerdictRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyBatch("accuracy needs at least one question"));
    }
    Ok(records.iter().filter(|r| r.correct).count() as f64 / records.len() as f64)
}

/// Micro-averaged accuracy of `model` over `qa_set`.
pub fn accuracy<M: LanguageModel>(judge: &dyn Judge, model: &M, qa_set: &[QaPair]) -> Result<f64> {
    let items: Vec<(QaId, &QaPair)> = qa_set
        .iter()
        .enumerate()
        .map(|(i, qa)| {
            (
                QaId {
                    owner: qa.owner_name.clone(),
                    index: i,
                },
                qa,
            )
        })
        .collect();
    fraction_correct(&judge_predictions(judge, model, &items)?)
}

fn tsv_field(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

/// Tab-separated audit table with a header row.
pub fn verdict_table(records: &[VerdictRecord]) -> String {
    let mut out = String::from("question_id\tquestion\tgold\tpredicted\tlabel\tcorrect\n");
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.id,
            tsv_field(&r.question),
            tsv_field(&r.gold),
            tsv_field(&r.predicted),
            r.label,
            r.correct
        ));
    }
    out
}

pub fn write_verdict_table(records: &[VerdictRecord], path: impl AsRef<Path>) -> Result<()> {
    util::write_file(path.as_ref(), verdict_table(records))
}
