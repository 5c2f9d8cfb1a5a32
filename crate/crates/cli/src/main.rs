use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use unlearn_core::backend::{AnyModel, BackendKind, Checkpointable, LanguageModel};
use unlearn_core::corpus::{generate_synthetic_corpus, load_corpus, make_split, save_corpus, Corpus, CorpusPolicy, Ratio};
use unlearn_core::evaluation::{render_grid, render_tsv, Evaluation, ReportRow, UnlearningReport};
use unlearn_core::experiment::{
    build_base_model, epoch_sweep, evaluate_checkpoint, evaluate_run, replay, run_experiment, BaseModelOptions,
    ExperimentConfig, RunManifest, MANIFEST_FILE,
};
use unlearn_core::judge::{ExactMatchJudge, HttpNliJudge, Judge};
use unlearn_core::memorization::{profile_memorization, select_memorized, AccuracyTable, DEFAULT_THRESHOLD};
use unlearn_core::nauf::{augment, save_augmented, AugmentOptions, RefusalTemplateSet, TemplateKind};

#[derive(Parser)]
#[command(name = "unlearn", version, about = "Name-aware unlearning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus, or validate and normalize an existing one.
    BuildDataset(BuildDataset),
    /// Train an original model that has memorized a corpus.
    Memorize(Memorize),
    /// Profile per-individual accuracy of a model.
    Identify(Identify),
    /// Assign individuals to forget and retain sets.
    Split(SplitCmd),
    /// Build contrastive augmentation examples.
    Augment(Augment),
    /// Run unlearning per a config file.
    Unlearn(Unlearn),
    /// Score an unlearned model.
    Evaluate(Evaluate),
    /// Render comparison grids across runs or reports.
    Report(Report),
}

#[derive(Args)]
struct BuildDataset {
    #[arg(long)]
    out: PathBuf,
    /// Existing corpus to validate instead of generating one.
    #[arg(long)]
    from: Option<PathBuf>,
    #[arg(long, default_value_t = 60)]
    people: usize,
    #[arg(long, default_value_t = 20)]
    qa_per_person: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum JudgeChoice {
    ExactMatch,
    /// HTTP service at UNLEARN_NLI_URL.
    Nli,
}

impl JudgeChoice {
    fn build(self) -> Result<Box<dyn Judge>> {
        Ok(match self {
            JudgeChoice::ExactMatch => Box::new(ExactMatchJudge),
            JudgeChoice::Nli => Box::new(HttpNliJudge::from_env()?),
        })
    }
}

#[derive(Args)]
struct Memorize {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    backend: BackendKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stop once this fraction of all corpus questions is answered correctly.
    #[arg(long)]
    target_accuracy: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Hidden width of the neural model.
    #[arg(long)]
    hidden: Option<usize>,
    /// Leave the probe facts out of training.
    #[arg(long)]
    no_probes: bool,
}

#[derive(Args)]
struct Identify {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, value_enum, default_value_t = JudgeChoice::ExactMatch)]
    judge: JudgeChoice,
}

#[derive(Args)]
struct SplitCmd {
    #[arg(long)]
    corpus: PathBuf,
    /// Accuracy table from `identify`; without it every valid individual is
    /// split.
    #[arg(long)]
    accuracy: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Forget:retain proportion, e.g. 1:9 or 10:90.
    #[arg(long, default_value = "1:9")]
    ratio: Ratio,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Augment {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    split: PathBuf,
    /// Original model, used to self-label retain-side questions.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Borrowed questions per individual; default matches each individual's
    /// training questions.
    #[arg(long)]
    per_person: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Name-aware refusal templates, one per line with [NAME].
    #[arg(long)]
    templates: Option<PathBuf>,
}

#[derive(Args)]
struct Unlearn {
    #[arg(long)]
    config: PathBuf,
    /// Run directory for checkpoints, trace and manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Evaluate {
    /// Run directory written by `unlearn`.
    #[arg(long, conflicts_with_all = ["config", "checkpoint"])]
    run: Option<PathBuf>,
    /// Epoch checkpoint to evaluate; the last one by default.
    #[arg(long, requires = "run")]
    epoch: Option<usize>,
    /// Config naming the original model and data, with `--checkpoint`.
    #[arg(long, requires = "checkpoint")]
    config: Option<PathBuf>,
    #[arg(long, requires = "config")]
    checkpoint: Option<PathBuf>,
    /// Report file; defaults to report.json in the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-question verdict file; defaults to audit.tsv next to the report.
    #[arg(long)]
    audit: Option<PathBuf>,
}

#[derive(Args)]
struct Report {
    /// Run directories or report files, optionally labeled as LABEL=PATH.
    #[arg(required = true)]
    inputs: Vec<String>,
    /// Comma-separated epochs to report for each run, e.g. 1,3,5,10.
    #[arg(long, value_delimiter = ',')]
    sweep: Vec<usize>,
    /// Retrain each run and check its outputs are byte-identical.
    #[arg(long)]
    verify_replay: bool,
    /// Tab-separated output instead of the grid.
    #[arg(long)]
    tsv: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Core errors already print their cause, so skip repeated links.
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.ends_with(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildDataset(a) => build_dataset(a),
        Command::Memorize(a) => memorize(a),
        Command::Identify(a) => identify(a),
        Command::Split(a) => split(a),
        Command::Augment(a) => augment_cmd(a),
        Command::Unlearn(a) => unlearn(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Report(a) => report(a),
    }
}

fn read_corpus(path: &Path) -> Result<Corpus> {
    let corpus = load_corpus(path, &CorpusPolicy::default())?;
    for issue in &corpus.issues {
        log::warn!("{}: line {}: {}: {}", path.display(), issue.line, issue.name, issue.problem);
    }
    Ok(corpus)
}

fn build_dataset(a: BuildDataset) -> Result<()> {
    let corpus = match &a.from {
        Some(src) => {
            let c = read_corpus(src)?;
            let keep: Vec<_> = c.eligible().into_iter().cloned().collect();
            println!("{} of {} records valid", keep.len(), c.len());
            Corpus::from_records(keep, &CorpusPolicy::default())?
        }
        None => Corpus::from_records(
            generate_synthetic_corpus(a.people, a.qa_per_person, a.seed)?,
            &CorpusPolicy::with_qa_count(a.qa_per_person),
        )?,
    };
    save_corpus(&corpus, &a.out)?;
    println!("wrote {} individuals, {} questions to {}", corpus.len(), corpus.qa_count(), a.out.display());
    Ok(())
}

fn memorize(a: Memorize) -> Result<()> {
    let corpus = read_corpus(&a.corpus)?;
    let mut opts = BaseModelOptions::for_backend(a.backend);
    opts.memorize.seed = a.seed;
    opts.neural.init_seed = a.seed;
    opts.probes = !a.no_probes;
    if let Some(t) = a.target_accuracy {
        opts.target_accuracy = t;
    }
    if let Some(n) = a.max_epochs {
        opts.memorize.max_epochs = n;
    }
    if let Some(h) = a.hidden {
        opts.neural.hidden = h;
    }
    match build_base_model(&corpus, &opts)? {
        AnyModel::Tabular(m) => m.save_checkpoint(&a.out)?,
        AnyModel::Neural(m) => m.save_checkpoint(&a.out)?,
    }
    println!("wrote {} model to {}", a.backend, a.out.display());
    Ok(())
}

fn profile<M: LanguageModel>(m: &M, corpus: &Corpus, judge: &dyn Judge, threshold: f64) -> Result<AccuracyTable> {
    Ok(profile_memorization(m, &corpus.eligible(), judge, threshold)?)
}

fn identify(a: Identify) -> Result<()> {
    let corpus = read_corpus(&a.corpus)?;
    let judge = a.judge.build()?;
    let table = match AnyModel::load(&a.model)? {
        AnyModel::Tabular(m) => profile(&m, &corpus, judge.as_ref(), a.threshold)?,
        AnyModel::Neural(m) => profile(&m, &corpus, judge.as_ref(), a.threshold)?,
    };
    table.save(&a.out)?;
    println!("accuracy\tindividuals");
    let bins = table.histogram(10);
    for (i, n) in bins.iter().enumerate() {
        println!("{:.1}-{:.1}\t{n}", i as f64 / 10.0, (i + 1) as f64 / 10.0);
    }
    println!(
        "{} of {} individuals at accuracy >= {}",
        table.memorized().len(),
        table.accuracies.len(),
        a.threshold
    );
    Ok(())
}

fn split(a: SplitCmd) -> Result<()> {
    let corpus = read_corpus(&a.corpus)?;
    let names: Vec<String> = match &a.accuracy {
        Some(p) => select_memorized(&AccuracyTable::load(p, a.threshold)?, a.threshold),
        None => corpus.eligible().iter().map(|r| r.name.clone()).collect(),
    };
    let mut people = Vec::with_capacity(names.len());
    for n in &names {
        people.push(
            corpus
                .get(n)
                .with_context(|| format!("accuracy table names {n:?}, which is not in {}", a.corpus.display()))?,
        );
    }
    let s = make_split(&people, a.ratio, a.seed)?;
    s.save(&a.out)?;
    println!(
        "{} forget / {} retain individuals ({}) written to {}",
        s.forget_names.len(),
        s.retain_names.len(),
        a.ratio,
        a.out.display()
    );
    Ok(())
}

fn augment_cmd(a: Augment) -> Result<()> {
    let corpus = read_corpus(&a.corpus)?;
    let split = unlearn_core::corpus::SplitAssignment::load(&a.split)?;
    let refusals = match &a.templates {
        Some(p) => RefusalTemplateSet::load(p, TemplateKind::NameAware)?,
        None => RefusalTemplateSet::name_aware(),
    };
    let opts = AugmentOptions {
        per_person: a.per_person,
        seed: a.seed,
    };
    let examples = match AnyModel::load(&a.model)? {
        AnyModel::Tabular(m) => augment(&split, &corpus, &m, &refusals, opts),
        AnyModel::Neural(m) => augment(&split, &corpus, &m, &refusals, opts),
    }
    .context("self-labeling needs a model that can answer unseen questions; use a neural original model")?;
    save_augmented(&examples, &a.out)?;
    println!("wrote {} augmented examples to {}", examples.len(), a.out.display());
    Ok(())
}

fn unlearn(a: Unlearn) -> Result<()> {
    let config = ExperimentConfig::load(&a.config)?;
    let manifest = run_experiment(&config, &a.config, &a.out)?;
    let last = manifest.final_checkpoint()?;
    println!(
        "{}: {} epochs, final checkpoint {}",
        config.objective,
        manifest.checkpoints.len(),
        a.out.join(&last.path).display()
    );
    Ok(())
}

fn write_evaluation(ev: &Evaluation, out: &Path, audit: Option<PathBuf>) -> Result<()> {
    ev.report.save(out)?;
    let audit = audit.unwrap_or_else(|| out.with_file_name("audit.tsv"));
    std::fs::write(&audit, ev.audit_tsv()).with_context(|| format!("writing {}", audit.display()))?;
    println!("{}", render_grid(&[ReportRow::new("result", ev.report.clone())]).trim_end());
    println!("report: {}\naudit: {}", out.display(), audit.display());
    Ok(())
}

fn evaluate(a: Evaluate) -> Result<()> {
    match (&a.run, &a.config, &a.checkpoint) {
        (Some(run), _, _) => {
            let config = RunManifest::load(run.join(MANIFEST_FILE))?.config;
            let judge = config.judge()?;
            let ev = evaluate_run(&run.join(MANIFEST_FILE), a.epoch, judge.as_ref())?;
            let default = match a.epoch {
                Some(e) => run.join(format!("report-epoch-{e:03}.json")),
                None => run.join("report.json"),
            };
            write_evaluation(&ev, &a.out.unwrap_or(default), a.audit)
        }
        (None, Some(cfg), Some(ckpt)) => {
            let config = ExperimentConfig::load(cfg)?;
            let ev = evaluate_checkpoint(&config, ckpt, config.judge()?.as_ref())?;
            let out = a.out.context("--out is required with --config")?;
            write_evaluation(&ev, &out, a.audit)
        }
        _ => bail!("pass either --run DIR or --config FILE --checkpoint FILE"),
    }
}

fn parse_input(s: &str) -> (String, PathBuf) {
    match s.split_once('=') {
        Some((label, path)) if !label.is_empty() => (label.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(s);
            let label = path
                .file_stem()
                .map(|x| x.to_string_lossy().into_owned())
                .unwrap_or_else(|| s.to_string());
            (label, path)
        }
    }
}

fn report(a: Report) -> Result<()> {
    let mut rows = Vec::new();
    for input in &a.inputs {
        let (label, path) = parse_input(input);
        let manifest = path.join(MANIFEST_FILE);
        if path.is_dir() {
            if !manifest.is_file() {
                bail!("{} is a directory without {MANIFEST_FILE}; pass a run directory or a report file", path.display());
            }
            let config = RunManifest::load(&manifest)?.config;
            let judge = config.judge()?;
            if a.verify_replay {
                let scratch = path.join(".replay");
                let outcome = replay(&manifest, &scratch);
                let _ = std::fs::remove_dir_all(&scratch);
                let outcome = outcome?;
                if !outcome.identical() {
                    bail!("replay of {label} differs in {}", outcome.mismatches.join(", "));
                }
                eprintln!("replay {label}: identical");
            }
            if a.sweep.is_empty() {
                let ev = evaluate_run(&manifest, None, judge.as_ref())?;
                rows.push(ReportRow::new(label, ev.report));
            } else {
                for row in epoch_sweep(&manifest, &a.sweep, judge.as_ref())? {
                    rows.push(ReportRow::new(format!("{label} {}", row.label), row.report));
                }
            }
        } else {
            if a.verify_replay || !a.sweep.is_empty() {
                bail!("{} is a report file; --sweep and --verify-replay need run directories", path.display());
            }
            let report = UnlearningReport::load(&path).with_context(|| format!("reading report {}", path.display()))?;
            rows.push(ReportRow::new(label, report));
        }
    }
    let text = if a.tsv { render_tsv(&rows) } else { render_grid(&rows) };
    match &a.out {
        Some(p) => std::fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}
