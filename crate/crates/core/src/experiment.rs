//! Experiment plumbing: config files, base-model construction, run manifests,
//! replay and epoch sweeps.
//!
//! A run is described by a TOML file:
//!
//! ```toml
//! seed = 7
//!
//! [backend]
//! kind = "tabular"            # or "neural"
//! checkpoint = "base.ckpt"    # the original model
//!
//! [data]
//! corpus = "corpus.jsonl"
//! split = "split.json"
//! augmented = "augmented.jsonl"   # optional, NAUF only
//!
//! [objective]
//! forget_loss = "nauf"        # ga | npo | rgd | rdpo | nauf
//! regularizer = "gd"          # none | gd | kld
//! beta = 0.1
//! forget_weight = 1.0
//! regularizer_weight = 1.0
//!
//! [train]
//! epochs = 5
//! batch_size = 32
//! learning_rate = 0.1         # default depends on the backend
//! optimizer = "sgd"           # sgd | adamw
//!
//! [templates]
//! name_aware = "refusals.txt"     # optional, built-in set otherwise
//! uninformed = "idk.txt"
//!
//! [evaluation]
//! judge = "exact-match"       # or "nli", reading UNLEARN_NLI_URL
//! probes = true
//! ```
//!
//! Relative paths are resolved against the directory of the config file.
//! All randomness derives from `seed`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{
    AnyModel, BackendKind, Checkpointable, Frozen, LanguageModel, NeuralConfig, TabularModel, TinyNeuralModel, Vocabulary,
};
use crate::corpus::{load_corpus, Corpus, CorpusPolicy, QaId, QaPair, SplitAssignment};
use crate::evaluation::{evaluate, Evaluation, ProbeTask, ReportRow, SyntheticProbe};
use crate::judge::{fraction_correct, judge_predictions, ExactMatchJudge, HttpNliJudge, Judge};
use crate::nauf::{load_augmented, RefusalTemplateSet, TemplateKind, NAME_PLACEHOLDER};
use crate::objectives::{ForgetLoss, LossConfig, RetainExample};
use crate::trainer::{
    memorize, run_unlearning, trace_to_csv, AdamWParams, MemorizeConfig, OptimizerKind, RetainBudget, TrainConfig,
    TrainingData, DEFAULT_DIVERGENCE_THRESHOLD,
};
use crate::{util, Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub corpus: PathBuf,
    pub split: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmented: Option<PathBuf>,
    /// Expected QA pairs per individual; `0` disables the check.
    #[serde(default = "default_qa_per_person")]
    pub qa_per_person: usize,
}

fn default_qa_per_person() -> usize {
    crate::corpus::QA_PER_PERSON
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adamw: Option<AdamWParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplatesSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name_aware: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uninformed: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JudgeKind {
    #[default]
    ExactMatch,
    Nli,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    #[serde(default)]
    pub judge: JudgeKind,
    #[serde(default = "yes")]
    pub probes: bool,
}

fn yes() -> bool {
    true
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            judge: JudgeKind::ExactMatch,
            probes: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub backend: BackendSection,
    pub data: DataSection,
    #[serde(default)]
    pub objective: LossConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub templates: TemplatesSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("{source}: {e}")))
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::parse(&util::read_to_string(path)?, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.backend.checkpoint);
        resolve(base, &mut self.data.corpus);
        resolve(base, &mut self.data.split);
        for p in [&mut self.data.augmented, &mut self.templates.name_aware, &mut self.templates.uninformed]
            .into_iter()
            .flatten()
        {
            resolve(base, p);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config()?.validate()?;
        if self.data.augmented.is_some() && self.objective.forget_loss != ForgetLoss::Nauf {
            return Err(Error::Config(format!(
                "data.augmented is set but the forget loss is {}; augmented examples are only used by NAUF",
                self.objective.forget_loss
            )));
        }
        Ok(())
    }

    /// Trainer settings with backend defaults filled in.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut t = TrainConfig::for_backend(self.backend.kind, self.objective);
        t.seed = self.seed;
        if let Some(x) = self.train.learning_rate {
            t.learning_rate = x;
        }
        if let Some(x) = self.train.batch_size {
            t.batch_size = x;
        }
        if let Some(x) = self.train.epochs {
            t.epochs = x;
        }
        if let Some(x) = self.train.optimizer {
            t.optimizer = x;
        }
        if let Some(x) = self.train.adamw {
            t.adamw = x;
        }
        t.divergence_threshold = self.train.divergence_threshold.unwrap_or(DEFAULT_DIVERGENCE_THRESHOLD);
        t.retain_budget = RetainBudget::ForgetSetSize;
        Ok(t)
    }

    pub fn corpus_policy(&self) -> CorpusPolicy {
        match self.data.qa_per_person {
            0 => CorpusPolicy {
                qa_per_person: None,
                ..CorpusPolicy::default()
            },
            n => CorpusPolicy::with_qa_count(n),
        }
    }

    /// Relabel templates the configured forget loss trains on.
    pub fn relabel_templates(&self) -> Result<RefusalTemplateSet> {
        let kind = if self.objective.forget_loss == ForgetLoss::Nauf {
            TemplateKind::NameAware
        } else {
            TemplateKind::Uninformed
        };
        let path = match kind {
            TemplateKind::NameAware => &self.templates.name_aware,
            TemplateKind::Uninformed => &self.templates.uninformed,
        };
        match path {
            Some(p) => RefusalTemplateSet::load(p, kind),
            None => Ok(RefusalTemplateSet::builtin(kind)),
        }
    }

    pub fn judge(&self) -> Result<Box<dyn Judge>> {
        Ok(match self.evaluation.judge {
            JudgeKind::ExactMatch => Box::new(ExactMatchJudge),
            JudgeKind::Nli => Box::new(HttpNliJudge::from_env()?),
        })
    }

    pub fn probes(&self) -> Vec<SyntheticProbe> {
        if self.evaluation.probes {
            SyntheticProbe::standard(0)
        } else {
            Vec::new()
        }
    }
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(util::sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub epoch: usize,
    /// Relative to the run directory.
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_path: PathBuf,
    /// The config with paths resolved, exactly as trained.
    pub config: ExperimentConfig,
    pub seed: u64,
    /// Input file → sha256 of its bytes.
    pub inputs: BTreeMap<PathBuf, String>,
    pub trace: PathBuf,
    pub trace_sha256: String,
    pub checkpoints: Vec<CheckpointRecord>,
    pub crate_version: String,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        serde_json::from_str(&util::read_to_string(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        util::write_file(path.as_ref(), s)
    }

    pub fn checkpoint(&self, epoch: usize) -> Result<&CheckpointRecord> {
        self.checkpoints.iter().find(|c| c.epoch == epoch).ok_or_else(|| {
            Error::Config(format!(
                "the run has no checkpoint for epoch {epoch}; it trained {} epochs",
                self.checkpoints.len()
            ))
        })
    }

    pub fn final_checkpoint(&self) -> Result<&CheckpointRecord> {
        self.checkpoints
            .last()
            .ok_or_else(|| Error::Config("the run trained zero epochs and has no checkpoint".into()))
    }
}

fn input_files(config: &ExperimentConfig) -> Vec<PathBuf> {
    let mut v = vec![config.backend.checkpoint.clone(), config.data.corpus.clone(), config.data.split.clone()];
    v.extend(config.data.augmented.clone());
    v.extend(config.templates.name_aware.clone());
    v.extend(config.templates.uninformed.clone());
    v
}

fn train_generic<M: Checkpointable>(
    base: M,
    config: &ExperimentConfig,
    corpus: &Corpus,
    split: &SplitAssignment,
    out_dir: &Path,
) -> Result<(Vec<CheckpointRecord>, String)> {
    let augmented = match &config.data.augmented {
        Some(p) => load_augmented(p)?,
        None => Vec::new(),
    };
    let relabels = config.relabel_templates()?;
    let train = config.train_config()?;
    let data = TrainingData::assemble(split, corpus, &augmented, config.objective.forget_loss, &relabels, config.seed)?;
    let frozen = Frozen::new(base);
    let mut records = Vec::new();
    let run = run_unlearning(&frozen, &data, &train, |epoch, model| {
        let rel = Path::new(CHECKPOINT_DIR).join(format!("epoch-{epoch:03}.ckpt"));
        let bytes = model.to_checkpoint().to_bytes();
        util::write_file(&out_dir.join(&rel), &bytes)?;
        records.push(CheckpointRecord {
            epoch,
            path: rel,
            sha256: util::sha256_hex(&bytes),
        });
        Ok(())
    })?;
    let trace = trace_to_csv(&run.trace);
    util::write_file(&out_dir.join(TRACE_FILE), &trace)?;
    Ok((records, util::sha256_hex(trace.as_bytes())))
}

/// Trains per `config`, writing per-epoch checkpoints, the loss trace and a
/// manifest into `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, config_path: &Path, out_dir: &Path) -> Result<RunManifest> {
    config.validate()?;
    let mut inputs = BTreeMap::new();
    for p in input_files(config) {
        let h = file_sha256(&p)?;
        inputs.insert(p, h);
    }
    let corpus = load_corpus(&config.data.corpus, &config.corpus_policy())?;
    let split = SplitAssignment::load(&config.data.split)?;
    let base = AnyModel::load(&config.backend.checkpoint)?;
    if base.kind() != config.backend.kind {
        return Err(Error::Config(format!(
            "backend.kind is {} but {} holds a {} model",
            config.backend.kind,
            config.backend.checkpoint.display(),
            base.kind()
        )));
    }
    let (checkpoints, trace_sha256) = match base {
        AnyModel::Tabular(m) => train_generic(m, config, &corpus, &split, out_dir)?,
        AnyModel::Neural(m) => train_generic(m, config, &corpus, &split, out_dir)?,
    };
    let manifest = RunManifest {
        config_path: config_path.to_path_buf(),
        config: config.clone(),
        seed: config.seed,
        inputs,
        trace: PathBuf::from(TRACE_FILE),
        trace_sha256,
        checkpoints,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayOutcome {
    /// Output files whose bytes differ from the recorded hash.
    pub mismatches: Vec<String>,
}

impl ReplayOutcome {
    pub fn identical(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Retrains the run recorded in `manifest_path` into `scratch_dir` and
/// compares every output against the recorded hashes. Fails if an input
/// file changed since the run.
pub fn replay(manifest_path: &Path, scratch_dir: &Path) -> Result<ReplayOutcome> {
    let manifest = RunManifest::load(manifest_path)?;
    for (path, expected) in &manifest.inputs {
        if &file_sha256(path)? != expected {
            return Err(Error::Config(format!("input {} changed since the run was recorded", path.display())));
        }
    }
    let fresh = run_experiment(&manifest.config, &manifest.config_path, scratch_dir)?;
    let mut mismatches = Vec::new();
    if fresh.trace_sha256 != manifest.trace_sha256 {
        mismatches.push(TRACE_FILE.to_string());
    }
    if fresh.checkpoints.len() != manifest.checkpoints.len() {
        mismatches.push(format!(
            "checkpoint count {} vs {}",
            fresh.checkpoints.len(),
            manifest.checkpoints.len()
        ));
    }
    for (a, b) in fresh.checkpoints.iter().zip(&manifest.checkpoints) {
        if a.sha256 != b.sha256 {
            mismatches.push(b.path.display().to_string());
        }
    }
    Ok(ReplayOutcome { mismatches })
}

fn run_dir(manifest_path: &Path) -> &Path {
    manifest_path.parent().unwrap_or(Path::new("."))
}

fn evaluate_generic<M: Checkpointable>(
    base: M,
    checkpoint: &Path,
    split: &SplitAssignment,
    corpus: &Corpus,
    judge: &dyn Judge,
    probes: &[&dyn ProbeTask],
) -> Result<Evaluation> {
    let unlearned = M::load_checkpoint(checkpoint)?;
    evaluate(&base, &unlearned, split, corpus, judge, probes)
}

/// Evaluates a checkpoint against the config's original model on the test
/// halves.
pub fn evaluate_checkpoint(config: &ExperimentConfig, checkpoint: &Path, judge: &dyn Judge) -> Result<Evaluation> {
    let corpus = load_corpus(&config.data.corpus, &config.corpus_policy())?;
    let split = SplitAssignment::load(&config.data.split)?;
    let probes = config.probes();
    let probe_refs: Vec<&dyn ProbeTask> = probes.iter().map(|p| p as &dyn ProbeTask).collect();
    match AnyModel::load(&config.backend.checkpoint)? {
        AnyModel::Tabular(m) => evaluate_generic(m, checkpoint, &split, &corpus, judge, &probe_refs),
        AnyModel::Neural(m) => evaluate_generic(m, checkpoint, &split, &corpus, judge, &probe_refs),
    }
}

/// Evaluates the checkpoint of `epoch` (the last one when `None`) of a
/// recorded run.
pub fn evaluate_run(manifest_path: &Path, epoch: Option<usize>, judge: &dyn Judge) -> Result<Evaluation> {
    let manifest = RunManifest::load(manifest_path)?;
    let record = match epoch {
        Some(e) => manifest.checkpoint(e)?,
        None => manifest.final_checkpoint()?,
    };
    evaluate_checkpoint(&manifest.config, &run_dir(manifest_path).join(&record.path), judge)
}

/// Reports at each of `epochs`, read from the run's checkpoints.
pub fn epoch_sweep(manifest_path: &Path, epochs: &[usize], judge: &dyn Judge) -> Result<Vec<ReportRow>> {
    epochs
        .iter()
        .map(|&e| {
            let ev = evaluate_run(manifest_path, Some(e), judge)?;
            Ok(ReportRow::new(format!("epoch {e}"), ev.report))
        })
        .collect()
}

/// How to build an original model from a corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseModelOptions {
    pub kind: BackendKind,
    pub neural: NeuralConfig,
    pub memorize: MemorizeConfig,
    /// Training stops once the model answers this fraction of all corpus
    /// questions correctly.
    pub target_accuracy: f64,
    pub probes: bool,
}

impl BaseModelOptions {
    pub fn for_backend(kind: BackendKind) -> Self {
        Self {
            kind,
            neural: NeuralConfig::default(),
            memorize: MemorizeConfig::for_backend(kind),
            target_accuracy: match kind {
                BackendKind::Tabular => 0.8,
                BackendKind::Neural => 0.97,
            },
            probes: true,
        }
    }
}

/// Every answer a closed-answer model needs: gold answers, refusals for every
/// individual, uninformed answers and probe choices.
fn answer_inventory(corpus: &Corpus, probes: &[SyntheticProbe]) -> Vec<String> {
    let refusals = RefusalTemplateSet::name_aware();
    let mut answers: Vec<String> = Vec::new();
    for r in &corpus.records {
        answers.extend(r.qa_pairs.iter().map(|q| q.gold_answer.clone()));
        answers.extend(refusals.templates().iter().map(|t| t.replace(NAME_PLACEHOLDER, &r.name)));
    }
    answers.extend(RefusalTemplateSet::uninformed().templates().iter().cloned());
    for p in probes {
        for it in p.items() {
            answers.extend(it.choices.iter().cloned());
        }
    }
    answers
}

fn vocabulary_texts<'a>(corpus: &'a Corpus, probes: &'a [SyntheticProbe], scratch: &'a mut Vec<String>) -> Vec<&'a str> {
    // Refusal tokens do not depend on the name apart from the name itself.
    scratch.extend(
        RefusalTemplateSet::name_aware()
            .templates()
            .iter()
            .map(|t| t.replace(NAME_PLACEHOLDER, "X")),
    );
    scratch.extend(RefusalTemplateSet::uninformed().templates().iter().cloned());
    let mut texts: Vec<&str> = Vec::new();
    for r in &corpus.records {
        texts.push(&r.name);
        for q in &r.qa_pairs {
            texts.push(&q.question);
            texts.push(&q.gold_answer);
        }
    }
    for p in probes {
        texts.extend(p.texts());
    }
    texts.extend(scratch.iter().map(String::as_str));
    texts
}

fn all_qa(corpus: &Corpus) -> Vec<(QaId, &QaPair)> {
    corpus
        .records
        .iter()
        .flat_map(|r| r.qa_pairs.iter().enumerate().map(move |(i, q)| (r.qa_id(i), q)))
        .collect()
}

fn memorize_generic<M: LanguageModel>(mut model: M, corpus: &Corpus, probes: &[SyntheticProbe], options: &BaseModelOptions) -> Result<M> {
    let mut examples: Vec<RetainExample> = corpus
        .records
        .iter()
        .flat_map(|r| {
            r.qa_pairs.iter().map(|q| RetainExample {
                question: q.question.clone(),
                answer: q.gold_answer.clone(),
                provenance: crate::objectives::Provenance::OriginalRetain,
            })
        })
        .collect();
    for p in probes {
        examples.extend(p.training_examples());
    }
    let items = all_qa(corpus);
    let judge = ExactMatchJudge;
    let epochs = memorize(&mut model, &examples, &options.memorize, |epoch, m| {
        let acc = fraction_correct(&judge_predictions(&judge, m, &items)?)?;
        log::info!("memorize epoch {epoch}: corpus accuracy {acc:.4}");
        Ok(acc >= options.target_accuracy)
    })?;
    log::info!("memorization stopped after {epochs} epochs");
    Ok(model)
}

/// An original model that has memorized `corpus` (and the probe facts).
pub fn build_base_model(corpus: &Corpus, options: &BaseModelOptions) -> Result<AnyModel> {
    let probes = if options.probes {
        SyntheticProbe::standard(0)
    } else {
        Vec::new()
    };
    match options.kind {
        BackendKind::Tabular => {
            let mut questions: Vec<String> = corpus
                .records
                .iter()
                .flat_map(|r| r.qa_pairs.iter().map(|q| q.question.clone()))
                .collect();
            for p in &probes {
                questions.extend(p.items().iter().map(|it| it.question.clone()));
            }
            let model = TabularModel::new(questions, answer_inventory(corpus, &probes))?;
            Ok(AnyModel::Tabular(memorize_generic(model, corpus, &probes, options)?))
        }
        BackendKind::Neural => {
            let mut scratch = Vec::new();
            let vocab = Vocabulary::build(vocabulary_texts(corpus, &probes, &mut scratch));
            let model = TinyNeuralModel::new(vocab, options.neural)?;
            Ok(AnyModel::Neural(memorize_generic(model, corpus, &probes, options)?))
        }
    }
}
