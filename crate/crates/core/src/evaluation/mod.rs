//! Forget/Retain scores, nonsense detection, probe tasks and report
//! rendering.
//!
//! With `acc_o` and `acc_u` the original and unlearned model's accuracy on a
//! question set:
//!
//! - Forget Score = `1 - acc_u / acc_o` on the forget set,
//! - Retain Score = `acc_u / acc_o` on the retain set,
//! - the average is the mean of the two, with a scope whose outputs are
//!   nonsense contributing 0.
//!
//! Scores are stored as fractions and rendered in percent. They are not
//! clamped: a Forget Score below zero means the unlearned model answers more
//! forget questions correctly than the original did, and is flagged.

mod nonsense;
mod probes;
mod render;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use nonsense::{detect_nonsense, is_degenerate, repetition_ratio, MAX_REPETITION_RATIO, MAX_TOKEN_RUN};
pub use probes::{probe_accuracy, ProbeItem, ProbeTask, SyntheticProbe};
pub use render::{render_grid, render_tsv, ReportRow};

use crate::backend::LanguageModel;
use crate::corpus::{Corpus, QaId, QaPair, Side, SplitAssignment};
use crate::judge::{fraction_correct, judge_predictions, Judge, VerdictRecord};
use crate::{util, Error, Result};

pub fn forget_score(acc_o: f64, acc_u: f64) -> Result<f64> {
    if acc_o == 0.0 {
        return Err(Error::UndefinedScore("forget"));
    }
    Ok(1.0 - acc_u / acc_o)
}

pub fn retain_score(acc_o: f64, acc_u: f64) -> Result<f64> {
    if acc_o == 0.0 {
        return Err(Error::UndefinedScore("retain"));
    }
    Ok(acc_u / acc_o)
}

/// Mean of the two scores; a nonsense scope contributes 0.
pub fn average_score(forget: f64, retain: f64, forget_ns: bool, retain_ns: bool) -> f64 {
    let f = if forget_ns { 0.0 } else { forget };
    let r = if retain_ns { 0.0 } else { retain };
    (f + r) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearningReport {
    pub acc_o_forget: f64,
    pub acc_u_forget: f64,
    pub acc_o_retain: f64,
    pub acc_u_retain: f64,
    pub forget_score: f64,
    pub retain_score: f64,
    pub avg_unlearning_score: f64,
    pub probe_accuracies: BTreeMap<String, f64>,
    /// `"forget"` / `"retain"` → whether the unlearned model's outputs on that
    /// scope are nonsense.
    pub ns_flags: BTreeMap<String, bool>,
}

impl UnlearningReport {
    pub fn from_accuracies(
        acc_o_forget: f64,
        acc_u_forget: f64,
        acc_o_retain: f64,
        acc_u_retain: f64,
        forget_ns: bool,
        retain_ns: bool,
    ) -> Result<Self> {
        let fs = forget_score(acc_o_forget, acc_u_forget)?;
        let rs = retain_score(acc_o_retain, acc_u_retain)?;
        Ok(Self {
            acc_o_forget,
            acc_u_forget,
            acc_o_retain,
            acc_u_retain,
            forget_score: fs,
            retain_score: rs,
            avg_unlearning_score: average_score(fs, rs, forget_ns, retain_ns),
            probe_accuracies: BTreeMap::new(),
            ns_flags: BTreeMap::from([("forget".to_string(), forget_ns), ("retain".to_string(), retain_ns)]),
        })
    }

    pub fn is_nonsense(&self, scope: Side) -> bool {
        self.ns_flags.get(&scope.to_string()).copied().unwrap_or(false)
    }

    pub fn negative_forget_score(&self) -> bool {
        self.forget_score < 0.0
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        util::write_file(path.as_ref(), self.to_json())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&util::read_to_string(path.as_ref())?)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelRole {
    Original,
    Unlearned,
}

/// One line of the per-run audit file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub model: ModelRole,
    pub side: Side,
    #[serde(flatten)]
    pub verdict: VerdictRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: UnlearningReport,
    pub audit: Vec<AuditRecord>,
}

impl Evaluation {
    /// Question ids that were judged.
    pub fn evaluated_ids(&self) -> impl Iterator<Item = &QaId> {
        self.audit.iter().map(|a| &a.verdict.id)
    }

    pub fn audit_tsv(&self) -> String {
        let mut out = String::from("model\tside\tquestion_id\tquestion\tgold\tpredicted\tlabel\tcorrect\n");
        let clean = |s: &str| s.replace(['\t', '\n', '\r'], " ");
        for a in &self.audit {
            let v = &a.verdict;
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                match a.model {
                    ModelRole::Original => "original",
                    ModelRole::Unlearned => "unlearned",
                },
                a.side,
                v.id,
                clean(&v.question),
                clean(&v.gold),
                clean(&v.predicted),
                v.label,
                v.correct
            ));
        }
        out
    }
}

fn lookup<'a>(corpus: &'a Corpus, ids: &[QaId]) -> Result<Vec<(QaId, &'a QaPair)>> {
    ids.iter()
        .map(|id| {
            corpus
                .qa(id)
                .map(|qa| (id.clone(), qa))
                .ok_or_else(|| Error::InvalidArgument(format!("question {id} is not in the corpus")))
        })
        .collect()
}

/// Scores `model_u` against `model_o` on explicit question sets.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_on<M: LanguageModel>(
    model_o: &M,
    model_u: &M,
    corpus: &Corpus,
    forget_ids: &[QaId],
    retain_ids: &[QaId],
    judge: &dyn Judge,
    probes: &[&dyn ProbeTask],
) -> Result<Evaluation> {
    let mut audit = Vec::new();
    let mut acc = HashMap::new();
    let mut ns = HashMap::new();
    for (side, ids) in [(Side::Forget, forget_ids), (Side::Retain, retain_ids)] {
        let items = lookup(corpus, ids)?;
        for (role, model) in [(ModelRole::Original, model_o), (ModelRole::Unlearned, model_u)] {
            let verdicts =
                judge_predictions(judge, model, &items).map_err(|e| e.context(format!("evaluating the {side} set")))?;
            acc.insert((side, role), fraction_correct(&verdicts).map_err(|e| e.context(format!("{side} set")))?);
            if role == ModelRole::Unlearned {
                ns.insert(side, detect_nonsense(&verdicts.iter().map(|v| v.predicted.as_str()).collect::<Vec<_>>()));
            }
            audit.extend(verdicts.into_iter().map(|verdict| AuditRecord {
                model: role,
                side,
                verdict,
            }));
        }
    }
    let mut report = UnlearningReport::from_accuracies(
        acc[&(Side::Forget, ModelRole::Original)],
        acc[&(Side::Forget, ModelRole::Unlearned)],
        acc[&(Side::Retain, ModelRole::Original)],
        acc[&(Side::Retain, ModelRole::Unlearned)],
        ns[&Side::Forget],
        ns[&Side::Retain],
    )?;
    for p in probes {
        report.probe_accuracies.insert(p.name().to_string(), probe_accuracy(model_u, *p)?);
    }
    if report.negative_forget_score() {
        log::warn!(
            "negative forget score {:.4}: the unlearned model is more accurate on the forget set than the original",
            report.forget_score
        );
    }
    Ok(Evaluation { report, audit })
}

/// Scores `model_u` on the test halves of the forget and retain sets.
pub fn evaluate<M: LanguageModel>(
    model_o: &M,
    model_u: &M,
    split: &SplitAssignment,
    corpus: &Corpus,
    judge: &dyn Judge,
    probes: &[&dyn ProbeTask],
) -> Result<Evaluation> {
    evaluate_on(
        model_o,
        model_u,
        corpus,
        &split.test_ids(Side::Forget),
        &split.test_ids(Side::Retain),
        judge,
        probes,
    )
}
