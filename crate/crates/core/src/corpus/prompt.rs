//! QA-generation prompt and the hook for an external generator.

use super::{PersonRecord, QaPair};
use crate::{Error, Result};

/// Prompt used to ask a large model for 20 QA pairs about one person.
/// `[ABSTRACT]` and `[NAME]` are placeholders.
pub const QA_GENERATION_TEMPLATE: &str = "[ABSTRACT]

Given the above [NAME]'s background information, please give me 20 simple questions and answers about this person point by point. Return the content STRICTLY in the following manner:
Q1: <content of the question>?
A1: <content of the answer>.

Q2: <content of the question>?
A2: <content of the answer>.

...

Q20: <content of the question>?
A20: <content of the answer>.

Make sure the person's name - [NAME] - appears in the content of the question. Make sure the answer is concise and accurate.";

/// Fills the template. Substituted text is inserted verbatim and never
/// rescanned, so placeholders inside the background stay literal.
pub fn build_generation_prompt(record: &PersonRecord) -> Result<String> {
    if record.background.trim().is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{:?} has an empty background",
            record.name
        )));
    }
    if record.name.trim().is_empty() {
        return Err(Error::InvalidArgument("record has an empty name".into()));
    }
    let mut out = String::with_capacity(QA_GENERATION_TEMPLATE.len() + record.background.len());
    let mut rest = QA_GENERATION_TEMPLATE;
    while let Some(pos) = rest.find('[') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if let Some(t) = tail.strip_prefix("[ABSTRACT]") {
            out.push_str(&record.background);
            rest = t;
        } else if let Some(t) = tail.strip_prefix("[NAME]") {
            out.push_str(&record.name);
            rest = t;
        } else {
            out.push('[');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// External text generator (e.g. a hosted LLM) used to produce QA pairs from
/// a prompt. Nothing in this crate calls a network service by itself.
pub trait QaGenerator {
    fn complete(&self, prompt: &str) -> Result<String>;
}

/// Parses `Qk: ...` / `Ak: ...` lines from a generator's reply. Pairs whose
/// question does not mention `name` are dropped.
pub fn parse_generated_qa(reply: &str, name: &str) -> Vec<QaPair> {
    let mut out = Vec::new();
    let mut pending: Option<String> = None;
    for line in reply.lines().map(str::trim) {
        if let Some((tag, body)) = line.split_once(':') {
            let body = body.trim();
            let numbered = |p: char| tag.len() > 1 && tag.starts_with(p) && tag[1..].chars().all(|c| c.is_ascii_digit());
            if numbered('Q') {
                pending = Some(body.to_string());
            } else if numbered('A') {
                if let Some(q) = pending.take() {
                    if q.contains(name) && !body.is_empty() {
                        out.push(QaPair {
                            question: q,
                            gold_answer: body.to_string(),
                            owner_name: name.to_string(),
                        });
                    }
                }
            }
        }
    }
    out
}

impl PersonRecord {
    /// Runs the generation hook and attaches the parsed pairs.
    pub fn generate_qa(&mut self, generator: &dyn QaGenerator) -> Result<usize> {
        let prompt = build_generation_prompt(self)?;
        let reply = generator.complete(&prompt)?;
        self.qa_pairs = parse_generated_qa(&reply, &self.name);
        Ok(self.qa_pairs.len())
    }
}
