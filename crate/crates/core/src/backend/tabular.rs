use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use super::{BackendKind, GradientBuffer, LanguageModel};
use crate::util::{log_sum_exp, softmax_into};
use crate::{Error, Result};

#[derive(Debug, PartialEq)]
struct Tables {
    questions: Vec<String>,
    answers: Vec<String>,
    question_index: HashMap<String, usize>,
    answer_index: HashMap<String, usize>,
}

/// One logit row over a closed answer set per known question.
///
/// `M(a | q) = softmax(logits[q])[a]`, so `∇ log M(a|q)` w.r.t. the row is
/// exactly `onehot(a) - softmax(row)`. Parameters are the row-major logit
/// matrix.
#[derive(Debug, Clone)]
pub struct TabularModel {
    tables: Arc<Tables>,
    logits: Vec<f64>,
}

/// Gradient stored per touched question row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TabularGradient {
    width: usize,
    rows: BTreeMap<usize, Vec<f64>>,
}

impl TabularGradient {
    fn row_mut(&mut self, row: usize) -> &mut Vec<f64> {
        let width = self.width;
        self.rows.entry(row).or_insert_with(|| vec![0.0; width])
    }

    pub fn touched_rows(&self) -> usize {
        self.rows.len()
    }
}

impl GradientBuffer for TabularGradient {
    fn add_scaled(&mut self, other: &Self, scale: f64) {
        if self.width == 0 {
            self.width = other.width;
        }
        for (&r, src) in &other.rows {
            let dst = self.row_mut(r);
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for row in self.rows.values_mut() {
            row.iter_mut().for_each(|x| *x *= factor);
        }
    }

    fn for_each_entry(&self, mut f: impl FnMut(usize, f64)) {
        for (&r, row) in &self.rows {
            for (c, &x) in row.iter().enumerate() {
                f(r * self.width + c, x);
            }
        }
    }

    fn get(&self, index: usize) -> f64 {
        if self.width == 0 {
            return 0.0;
        }
        self.rows
            .get(&(index / self.width))
            .map_or(0.0, |row| row[index % self.width])
    }
}

fn dedup(items: impl IntoIterator<Item = String>) -> (Vec<String>, HashMap<String, usize>) {
    let mut list = Vec::new();
    let mut index = HashMap::new();
    for s in items {
        if !index.contains_key(&s) {
            index.insert(s.clone(), list.len());
            list.push(s);
        }
    }
    (list, index)
}

impl TabularModel {
    /// All-zero (uniform) model over the given questions and answers.
    /// Duplicates are dropped; first occurrence fixes the index.
    pub fn new(questions: impl IntoIterator<Item = String>, answers: impl IntoIterator<Item = String>) -> Result<Self> {
        let (questions, question_index) = dedup(questions);
        let (answers, answer_index) = dedup(answers);
        if questions.is_empty() || answers.is_empty() {
            return Err(Error::InvalidArgument(
                "tabular model needs at least one question and one answer".into(),
            ));
        }
        let logits = vec![0.0; questions.len() * answers.len()];
        Ok(Self {
            tables: Arc::new(Tables {
                questions,
                answers,
                question_index,
                answer_index,
            }),
            logits,
        })
    }

    pub(crate) fn from_parts(questions: Vec<String>, answers: Vec<String>, logits: Vec<f64>) -> Result<Self> {
        let mut m = Self::new(questions, answers)?;
        if m.logits.len() != logits.len() {
            return Err(Error::InvalidArgument(format!(
                "logit matrix has {} entries, expected {}",
                logits.len(),
                m.logits.len()
            )));
        }
        m.logits = logits;
        Ok(m)
    }

    pub fn questions(&self) -> &[String] {
        &self.tables.questions
    }

    pub fn answers(&self) -> &[String] {
        &self.tables.answers
    }

    pub fn question_id(&self, question: &str) -> Result<usize> {
        self.tables
            .question_index
            .get(question)
            .copied()
            .ok_or_else(|| Error::UnknownQuestion(question.to_string()))
    }

    pub fn answer_id(&self, answer: &str) -> Result<usize> {
        self.tables
            .answer_index
            .get(answer)
            .copied()
            .ok_or_else(|| Error::UnknownAnswer(answer.to_string()))
    }

    fn width(&self) -> usize {
        self.tables.answers.len()
    }

    pub fn row(&self, question: &str) -> Result<&[f64]> {
        let q = self.question_id(question)?;
        let w = self.width();
        Ok(&self.logits[q * w..(q + 1) * w])
    }

    pub fn row_mut(&mut self, question: &str) -> Result<&mut [f64]> {
        let q = self.question_id(question)?;
        let w = self.width();
        Ok(&mut self.logits[q * w..(q + 1) * w])
    }

    pub fn set_logit(&mut self, question: &str, answer: &str, value: f64) -> Result<()> {
        let a = self.answer_id(answer)?;
        self.row_mut(question)?[a] = value;
        Ok(())
    }

    /// Answer distribution for `question`.
    pub fn probabilities(&self, question: &str) -> Result<Vec<f64>> {
        let row = self.row(question)?;
        let mut p = vec![0.0; row.len()];
        softmax_into(row, &mut p);
        Ok(p)
    }

    fn same_tables(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.tables, &other.tables) || self.tables == other.tables
    }
}

impl LanguageModel for TabularModel {
    type Gradient = TabularGradient;

    fn kind(&self) -> BackendKind {
        BackendKind::Tabular
    }

    fn answer_log_likelihood(&self, question: &str, answer: &str) -> Result<f64> {
        let row = self.row(question)?;
        let a = self.answer_id(answer)?;
        Ok(row[a] - log_sum_exp(row))
    }

    fn accumulate_log_likelihood<F>(&self, question: &str, answer: &str, grad: &mut TabularGradient, weight: F) -> Result<f64>
    where
        F: FnOnce(f64) -> Result<f64>,
    {
        let q = self.question_id(question)?;
        let a = self.answer_id(answer)?;
        let row = self.row(question)?;
        let mut p = vec![0.0; row.len()];
        let lse = softmax_into(row, &mut p);
        let ll = row[a] - lse;
        let w = weight(ll)?;
        if w != 0.0 {
            grad.width = self.width();
            let g = grad.row_mut(q);
            for (gi, pi) in g.iter_mut().zip(&p) {
                *gi -= w * pi;
            }
            g[a] += w;
        }
        Ok(ll)
    }

    fn kl_from_reference(&self, reference: &Self, question: &str, answer: &str) -> Result<f64> {
        let mut scratch = self.zero_gradient();
        self.accumulate_kl_from_reference(reference, question, answer, 0.0, &mut scratch)
    }

    fn accumulate_kl_from_reference(
        &self,
        reference: &Self,
        question: &str,
        answer: &str,
        scale: f64,
        grad: &mut TabularGradient,
    ) -> Result<f64> {
        if !self.same_tables(reference) {
            return Err(Error::VocabularyMismatch);
        }
        self.answer_id(answer)?;
        let q = self.question_id(question)?;
        let p_ref = reference.probabilities(question)?;
        let row = self.row(question)?;
        let mut p = vec![0.0; row.len()];
        let lse = softmax_into(row, &mut p);
        let ref_row = reference.row(question)?;
        let ref_lse = log_sum_exp(ref_row);
        let kl: f64 = p_ref
            .iter()
            .zip(ref_row.iter().zip(row))
            .map(|(&pr, (&lr, &lu))| if pr > 0.0 { pr * ((lr - ref_lse) - (lu - lse)) } else { 0.0 })
            .sum();
        if scale != 0.0 {
            grad.width = self.width();
            let g = grad.row_mut(q);
            for ((gi, pu), pr) in g.iter_mut().zip(&p).zip(&p_ref) {
                *gi += scale * (pu - pr);
            }
        }
        Ok(kl.max(0.0))
    }

    fn generate(&self, question: &str) -> Result<String> {
        let row = self.row(question)?;
        let mut best = 0;
        for (i, &x) in row.iter().enumerate() {
            if x > row[best] {
                best = i;
            }
        }
        Ok(self.tables.answers[best].clone())
    }

    fn zero_gradient(&self) -> TabularGradient {
        TabularGradient {
            width: self.width(),
            rows: BTreeMap::new(),
        }
    }

    fn parameters(&self) -> &[f64] {
        &self.logits
    }

    fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }
}
