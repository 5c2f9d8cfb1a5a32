//! Per-individual accuracy profiling and selection of deeply memorized
//! individuals.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::LanguageModel;
use crate::corpus::{PersonRecord, QaId, QaPair};
use crate::judge::{fraction_correct, judge_predictions, Judge};
use crate::{parallel, util, Error, Result};

/// Accuracy at or above which an individual counts as deeply memorized.
pub const DEFAULT_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub threshold: f64,
    pub accuracies: BTreeMap<String, f64>,
}

impl AccuracyTable {
    pub fn new(threshold: f64, accuracies: BTreeMap<String, f64>) -> Result<Self> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::InvalidArgument(format!("threshold must lie in (0, 1], got {threshold}")));
        }
        if let Some((name, a)) = accuracies.iter().find(|(_, a)| !(0.0..=1.0).contains(*a)) {
            return Err(Error::InvalidArgument(format!("accuracy {a} for {name} is outside [0, 1]")));
        }
        Ok(Self { threshold, accuracies })
    }

    /// Names at or above the table's own threshold.
    pub fn memorized(&self) -> Vec<String> {
        select_memorized(self, self.threshold)
    }

    /// Counts per bin of width `1/bins` over [0, 1]; accuracy 1.0 falls in
    /// the last bin.
    pub fn histogram(&self, bins: usize) -> Vec<usize> {
        let mut counts = vec![0; bins.max(1)];
        let last = counts.len() - 1;
        for &a in self.accuracies.values() {
            let b = ((a * counts.len() as f64).floor() as usize).min(last);
            counts[b] += 1;
        }
        counts
    }

    /// Two-column tab-separated table: `name`, `accuracy`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("name\taccuracy\n");
        for (name, a) in &self.accuracies {
            out.push_str(&format!("{name}\t{a}\n"));
        }
        out
    }

    pub fn from_tsv(text: &str, threshold: f64) -> Result<Self> {
        let mut accuracies = BTreeMap::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: "accuracy table".into(),
                line: i + 1,
                message,
            };
            let (name, acc) = line
                .rsplit_once('\t')
                .ok_or_else(|| parse_err("expected two tab-separated columns".into()))?;
            let acc: f64 = acc.trim().parse().map_err(|e| parse_err(format!("{e}")))?;
            accuracies.insert(name.to_string(), acc);
        }
        Self::new(threshold, accuracies)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        util::write_file(path.as_ref(), self.to_tsv())
    }

    pub fn load(path: impl AsRef<Path>, threshold: f64) -> Result<Self> {
        Self::from_tsv(&util::read_to_string(path.as_ref())?, threshold)
    }
}

/// Accuracy of `model` on each individual's questions.
pub fn profile_memorization<M: LanguageModel>(
    model: &M,
    records: &[&PersonRecord],
    judge: &dyn Judge,
    threshold: f64,
) -> Result<AccuracyTable> {
    let per_person = parallel::try_map_collect(records, |r| {
        let items: Vec<(QaId, &QaPair)> = r.qa_pairs.iter().enumerate().map(|(i, qa)| (r.qa_id(i), qa)).collect();
        let verdicts = judge_predictions(judge, model, &items)?;
        let acc = fraction_correct(&verdicts).map_err(|e| e.context(format!("profiling {}", r.name)))?;
        Ok((r.name.clone(), acc))
    })?;
    AccuracyTable::new(threshold, per_person.into_iter().collect())
}

/// Names with accuracy `>= threshold`, sorted.
pub fn select_memorized(table: &AccuracyTable, threshold: f64) -> Vec<String> {
    // BTreeMap iteration is already lexicographic.
    table
        .accuracies
        .iter()
        .filter(|(_, &a)| a >= threshold)
        .map(|(n, _)| n.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(entries: &[(&str, f64)]) -> AccuracyTable {
        AccuracyTable::new(0.8, entries.iter().map(|(n, a)| (n.to_string(), *a)).collect()).unwrap()
    }

    #[test]
    fn boundary_is_inclusive() {
        let t = table(&[("B", 0.79), ("A", 0.8)]);
        assert_eq!(select_memorized(&t, 0.8), vec!["A".to_string()]);
        assert_eq!(select_memorized(&t, f64::EPSILON), vec!["A".to_string(), "B".into()]);
        assert!(select_memorized(&table(&[]), 0.8).is_empty());
    }

    #[test]
    fn raising_threshold_never_adds_names() {
        let t = table(&[("a", 0.1), ("b", 0.5), ("c", 0.85), ("d", 1.0)]);
        let mut prev = usize::MAX;
        for k in 1..=100 {
            let n = select_memorized(&t, k as f64 / 100.0).len();
            assert!(n <= prev);
            prev = n;
        }
    }

    #[test]
    fn tsv_round_trip() {
        let t = table(&[("Ida Vell", 0.85), ("Bo Renn", 1.0)]);
        assert_eq!(AccuracyTable::from_tsv(&t.to_tsv(), 0.8).unwrap(), t);
    }

    #[test]
    fn histogram_bins() {
        let t = table(&[("a", 0.0), ("b", 0.55), ("c", 1.0), ("d", 0.95)]);
        assert_eq!(t.histogram(10), vec![1, 0, 0, 0, 0, 1, 0, 0, 0, 2]);
    }

    #[test]
    fn invalid_threshold_rejected() {
        assert!(AccuracyTable::new(0.0, BTreeMap::new()).is_err());
        assert!(AccuracyTable::new(1.5, BTreeMap::new()).is_err());
    }
}
