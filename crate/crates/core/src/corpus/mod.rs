//! Person records, validation and the line-oriented corpus file.
//!
//! A corpus file holds one JSON object per line:
//!
//! ```text
//! {"name":"...","background":"...","popularity":123,"qa_pairs":[{"question":"...","answer":"..."}]}
//! ```
//!
//! Records that fail validation are kept (so nothing is silently dropped) but
//! reported as [`RecordIssue`]s and excluded by [`Corpus::eligible`].

mod prompt;
mod split;
mod synthetic;

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{util, Error, Result};

pub use prompt::{build_generation_prompt, parse_generated_qa, QaGenerator, QA_GENERATION_TEMPLATE};
pub use split::{make_split, QaHalves, Ratio, Side, SplitAssignment};
pub use synthetic::{generate_synthetic_corpus, ATTRIBUTES};

/// Number of QA pairs a complete record carries.
pub const QA_PER_PERSON: usize = 20;
pub const MIN_BACKGROUND_WORDS: usize = 100;
pub const MAX_BACKGROUND_WORDS: usize = 500;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaPair {
    pub question: String,
    pub gold_answer: String,
    pub owner_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PersonRecord {
    pub name: String,
    pub background: String,
    /// Monthly page views.
    pub popularity: u64,
    pub qa_pairs: Vec<QaPair>,
}

/// Identifies one question in the corpus.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QaId {
    pub owner: String,
    pub index: usize,
}

impl std::fmt::Display for QaId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}#{}", self.owner, self.index)
    }
}

impl PersonRecord {
    pub fn new(
        name: impl Into<String>,
        background: impl Into<String>,
        popularity: u64,
        qa: impl IntoIterator<Item = (String, String)>,
    ) -> Self {
        let name = name.into();
        let qa_pairs = qa
            .into_iter()
            .map(|(question, gold_answer)| QaPair {
                question,
                gold_answer,
                owner_name: name.clone(),
            })
            .collect();
        Self {
            name,
            background: background.into(),
            popularity,
            qa_pairs,
        }
    }

    pub fn background_word_count(&self) -> usize {
        self.background.split_whitespace().count()
    }

    pub fn qa_id(&self, index: usize) -> QaId {
        QaId {
            owner: self.name.clone(),
            index,
        }
    }

    /// Every problem with this record under `policy`; empty means usable.
    pub fn problems(&self, policy: &CorpusPolicy) -> Vec<RecordProblem> {
        let mut out = Vec::new();
        if self.name.trim().is_empty() {
            out.push(RecordProblem::EmptyName);
        }
        if let Some(expected) = policy.qa_per_person {
            if self.qa_pairs.len() != expected {
                out.push(RecordProblem::Incomplete {
                    found: self.qa_pairs.len(),
                    expected,
                });
            }
        }
        if let Some((min, max)) = policy.background_words {
            let words = self.background_word_count();
            if words < min || words > max {
                out.push(RecordProblem::BackgroundLength { words, min, max });
            }
        }
        for (index, qa) in self.qa_pairs.iter().enumerate() {
            if qa.question.trim().is_empty() || qa.gold_answer.trim().is_empty() {
                out.push(RecordProblem::EmptyQa { index });
            } else if qa.owner_name != self.name {
                out.push(RecordProblem::WrongOwner { index });
            } else if !self.name.is_empty() && !qa.question.contains(&self.name) {
                out.push(RecordProblem::NameMissingFromQuestion { index });
            }
        }
        out
    }
}

/// Which checks a record must pass to take part in experiments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusPolicy {
    /// Required QA count; `None` accepts any count of at least one.
    pub qa_per_person: Option<usize>,
    /// Inclusive word-count bounds on the background text.
    pub background_words: Option<(usize, usize)>,
}

impl Default for CorpusPolicy {
    fn default() -> Self {
        Self {
            qa_per_person: Some(QA_PER_PERSON),
            background_words: Some((MIN_BACKGROUND_WORDS, MAX_BACKGROUND_WORDS)),
        }
    }
}

impl CorpusPolicy {
    /// Policy for synthetic corpora with a non-standard QA count.
    pub fn with_qa_count(qa_per_person: usize) -> Self {
        Self {
            qa_per_person: Some(qa_per_person),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecordProblem {
    EmptyName,
    Incomplete { found: usize, expected: usize },
    BackgroundLength { words: usize, min: usize, max: usize },
    EmptyQa { index: usize },
    WrongOwner { index: usize },
    NameMissingFromQuestion { index: usize },
}

impl std::fmt::Display for RecordProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RecordProblem::EmptyName => write!(f, "empty name"),
            RecordProblem::Incomplete { found, expected } => {
                write!(f, "incomplete: {found} QA pairs, expected {expected}")
            }
            RecordProblem::BackgroundLength { words, min, max } => {
                write!(f, "background has {words} words, outside [{min}, {max}]")
            }
            RecordProblem::EmptyQa { index } => write!(f, "QA pair {index} has an empty field"),
            RecordProblem::WrongOwner { index } => write!(f, "QA pair {index} belongs to another individual"),
            RecordProblem::NameMissingFromQuestion { index } => {
                write!(f, "question {index} does not mention the individual's name")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordIssue {
    /// 1-based line in the source file; 0 for in-memory corpora.
    pub line: usize,
    pub name: String,
    pub problem: RecordProblem,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub records: Vec<PersonRecord>,
    pub issues: Vec<RecordIssue>,
}

impl Corpus {
    /// Builds a corpus from in-memory records, validating each.
    pub fn from_records(records: Vec<PersonRecord>, policy: &CorpusPolicy) -> Result<Self> {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            if let Some(first) = seen.insert(r.name.as_str(), i + 1) {
                return Err(Error::DuplicateName {
                    name: r.name.clone(),
                    first,
                    second: i + 1,
                });
            }
        }
        let issues = records
            .iter()
            .flat_map(|r| {
                r.problems(policy).into_iter().map(|problem| RecordIssue {
                    line: 0,
                    name: r.name.clone(),
                    problem,
                })
            })
            .collect();
        Ok(Self { records, issues })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&PersonRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn index(&self) -> HashMap<&str, &PersonRecord> {
        self.records.iter().map(|r| (r.name.as_str(), r)).collect()
    }

    /// Records without validation issues.
    pub fn eligible(&self) -> Vec<&PersonRecord> {
        let flagged: BTreeSet<&str> = self.issues.iter().map(|i| i.name.as_str()).collect();
        self.records
            .iter()
            .filter(|r| !flagged.contains(r.name.as_str()))
            .collect()
    }

    pub fn qa_count(&self) -> usize {
        self.records.iter().map(|r| r.qa_pairs.len()).sum()
    }

    pub fn qa(&self, id: &QaId) -> Option<&QaPair> {
        self.get(&id.owner).and_then(|r| r.qa_pairs.get(id.index))
    }

    /// Canonical serialization: one compact JSON object per line, `\n`
    /// terminated, fields in fixed order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let line = RecordLine {
                name: r.name.clone(),
                background: r.background.clone(),
                popularity: r.popularity,
                qa_pairs: r
                    .qa_pairs
                    .iter()
                    .map(|qa| QaLine {
                        question: qa.question.clone(),
                        answer: qa.gold_answer.clone(),
                    })
                    .collect(),
            };
            out.push_str(&serde_json::to_string(&line).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse_jsonl(text: &str, source: &str, policy: &CorpusPolicy) -> Result<Self> {
        let mut records = Vec::new();
        let mut issues = Vec::new();
        let mut first_line: HashMap<String, usize> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let parsed: RecordLine = serde_json::from_str(raw).map_err(|e| Error::Parse {
                path: source.to_string(),
                line,
                message: e.to_string(),
            })?;
            if let Some(&first) = first_line.get(&parsed.name) {
                return Err(Error::DuplicateName {
                    name: parsed.name,
                    first,
                    second: line,
                });
            }
            first_line.insert(parsed.name.clone(), line);
            let record = PersonRecord::new(
                parsed.name,
                parsed.background,
                parsed.popularity,
                parsed.qa_pairs.into_iter().map(|q| (q.question, q.answer)),
            );
            issues.extend(record.problems(policy).into_iter().map(|problem| RecordIssue {
                line,
                name: record.name.clone(),
                problem,
            }));
            records.push(record);
        }
        for issue in &issues {
            log::warn!("{source}: line {}: {}: {}", issue.line, issue.name, issue.problem);
        }
        Ok(Self { records, issues })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    name: String,
    background: String,
    popularity: u64,
    qa_pairs: Vec<QaLine>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QaLine {
    question: String,
    answer: String,
}

pub fn load_corpus(path: impl AsRef<Path>, policy: &CorpusPolicy) -> Result<Corpus> {
    let path = path.as_ref();
    let text = util::read_to_string(path)?;
    Corpus::parse_jsonl(&text, &path.display().to_string(), policy)
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    util::write_file(path.as_ref(), corpus.to_jsonl())
}
