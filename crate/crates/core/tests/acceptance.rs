//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

#![allow(clippy::approx_constant, clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{BTreeSet, HashMap};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use unlearn_core::backend::{
    AnyModel, BackendKind, Checkpointable, Frozen, GradientBuffer, LanguageModel, NeuralConfig, TabularModel,
    TinyNeuralModel, Vocabulary,
};
use unlearn_core::corpus::{
    generate_synthetic_corpus, make_split, Corpus, CorpusPolicy, PersonRecord, QaId, Ratio, Side, SplitAssignment,
};
use unlearn_core::evaluation::{evaluate, evaluate_on, render_grid, Evaluation, ReportRow, UnlearningReport};
use unlearn_core::experiment::{build_base_model, epoch_sweep, replay, run_experiment, BaseModelOptions, ExperimentConfig};
use unlearn_core::judge::ExactMatchJudge;
use unlearn_core::memorization::{profile_memorization, select_memorized};
use unlearn_core::nauf::{augment, AugmentOptions, AugmentedExample, RefusalTemplateSet};
use unlearn_core::objectives::{
    combined_loss, combined_loss_gradient, forget_loss_gradient, loss_ga, loss_gd_reg, loss_kld_reg, loss_nauf,
    loss_npo, loss_rdpo, loss_rgd, regularizer_gradient, ForgetExample, ForgetLoss, LossBatch, LossConfig, Provenance,
    Regularizer, RetainExample,
};
use unlearn_core::trainer::{make_epoch_schedule, run_unlearning, TrainConfig, TrainingData};
use unlearn_core::Error;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn err(e: Error) -> String {
    e.to_string()
}

fn corpus(n: usize, seed: u64) -> Corpus {
    Corpus::from_records(generate_synthetic_corpus(n, 20, seed).unwrap(), &CorpusPolicy::default()).unwrap()
}

fn forget_ex(q: &str, gold: &str, relabel: &str) -> ForgetExample {
    ForgetExample {
        question: q.into(),
        gold_answer: Some(gold.into()),
        relabel: Some(relabel.into()),
        provenance: Provenance::OriginalForget,
    }
}

fn retain_ex(q: &str, a: &str) -> RetainExample {
    RetainExample {
        question: q.into(),
        answer: a.into(),
        provenance: Provenance::OriginalRetain,
    }
}

// ---------------------------------------------------------------------------
// 1. analytic values

fn c1_analytic() -> Outcome {
    let two = TabularModel::new(vec!["q".to_string()], vec!["a".to_string(), "b".to_string()]).unwrap();
    let ex = [forget_ex("q", "a", "b")];
    let mut checks = Vec::new();

    let ga = loss_ga(&two, &ex).map_err(err)?;
    checks.push(("GA p=0.5", ga, 0.5f64.ln(), -0.6931));
    let npo = loss_npo(&two, &two, &ex, 0.1).map_err(err)?;
    checks.push(("NPO ratio 1", npo, 20.0 * 2f64.ln(), 13.8629));
    let rdpo = loss_rdpo(&two, &two, &ex, 0.1).map_err(err)?;
    checks.push(("RDPO M_u=M_o", rdpo, 2f64.ln(), 0.6931));
    let kld = loss_kld_reg(&two, &two, &[retain_ex("q", "a")]).map_err(err)?;
    checks.push(("KLD equal", kld, 0.0, 0.0));

    // p(a) = e^-2 with two answers: logit(a) - logit(b) = ln(e^-2 / (1 - e^-2)).
    let mut gd_model = two.clone();
    let p = (-2f64).exp();
    gd_model.set_logit("q", "a", (p / (1.0 - p)).ln()).unwrap();
    let gd = loss_gd_reg(&gd_model, &[retain_ex("q", "a")]).map_err(err)?;
    checks.push(("GD p=e^-2", gd, 2.0, 2.0));

    for (name, got, exact, printed) in &checks {
        ensure!((got - exact).abs() < 1e-6, "{name}: {got} vs exact {exact}");
        ensure!(((got * 1e4).round() / 1e4 - printed).abs() < 1e-9, "{name}: {got} does not round to {printed}");
    }
    Ok(checks
        .iter()
        .map(|(n, g, _, _)| format!("{n}={g:.4}"))
        .collect::<Vec<_>>()
        .join(" "))
}

// ---------------------------------------------------------------------------
// 2. finite differences

const QUESTIONS: usize = 4;
const ANSWERS: usize = 5;
const TRIALS: usize = 100;

struct Trial {
    model: TabularModel,
    reference: TabularModel,
    batch: LossBatch,
}

fn random_trial(rng: &mut ChaCha8Rng) -> Trial {
    let qs: Vec<String> = (0..QUESTIONS).map(|i| format!("q{i}")).collect();
    let answers: Vec<String> = (0..ANSWERS).map(|i| format!("a{i}")).collect();
    let mut model = TabularModel::new(qs.clone(), answers.clone()).unwrap();
    let mut reference = model.clone();
    for x in model.parameters_mut() {
        *x = rng.gen_range(-2.0..2.0);
    }
    for x in reference.parameters_mut() {
        *x = rng.gen_range(-2.0..2.0);
    }
    let n = rng.gen_range(1..=4);
    let pick = |rng: &mut ChaCha8Rng, v: &[String]| v[rng.gen_range(0..v.len())].clone();
    let forget = (0..n)
        .map(|_| {
            let q = pick(rng, &qs);
            forget_ex(&q, &pick(rng, &answers), &pick(rng, &answers))
        })
        .collect();
    let retain = (0..n).map(|_| retain_ex(&pick(rng, &qs), &pick(rng, &answers))).collect();
    Trial {
        model,
        reference,
        batch: LossBatch { forget, retain },
    }
}

/// Relative error between the analytic gradient and central differences of
/// `f`, measured on the whole parameter vector.
fn fd_error<G: GradientBuffer>(model: &TabularModel, analytic: &G, f: impl Fn(&TabularModel) -> f64) -> f64 {
    let h = 1e-6;
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nn = 0.0;
    for i in 0..model.parameters().len() {
        let mut plus = model.clone();
        plus.parameters_mut()[i] += h;
        let mut minus = model.clone();
        minus.parameters_mut()[i] -= h;
        let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
        let a = analytic.get(i);
        diff += (a - numeric).powi(2);
        na += a * a;
        nn += numeric * numeric;
    }
    let scale = na.sqrt().max(nn.sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff.sqrt() / scale
    }
}

fn c2_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut record = |name: String, e: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some(w) => w.1 = w.1.max(e),
        None => worst.push((name, e)),
    };

    for loss in ForgetLoss::ALL {
        for _ in 0..TRIALS {
            let t = random_trial(&mut rng);
            let beta = rng.gen_range(0.05..1.0);
            let (_, g) = forget_loss_gradient(loss, beta, &t.model, &t.reference, &t.batch.forget).map_err(err)?;
            let e = fd_error(&t.model, &g, |m| {
                forget_loss_gradient(loss, beta, m, &t.reference, &t.batch.forget).unwrap().0
            });
            record(loss.to_string(), e);
        }
    }
    for reg in [Regularizer::Gd, Regularizer::Kld] {
        for _ in 0..TRIALS {
            let t = random_trial(&mut rng);
            let (_, g) = regularizer_gradient(reg, &t.model, &t.reference, &t.batch.retain).map_err(err)?;
            let e = fd_error(&t.model, &g, |m| regularizer_gradient(reg, m, &t.reference, &t.batch.retain).unwrap().0);
            record(reg.to_string(), e);
        }
    }
    for loss in ForgetLoss::ALL {
        for reg in [Regularizer::None, Regularizer::Gd, Regularizer::Kld] {
            for _ in 0..TRIALS {
                let t = random_trial(&mut rng);
                let cfg = LossConfig {
                    forget_loss: loss,
                    regularizer: reg,
                    beta: rng.gen_range(0.05..1.0),
                    forget_weight: rng.gen_range(0.1..2.0),
                    regularizer_weight: rng.gen_range(0.1..2.0),
                };
                let (_, g) = combined_loss_gradient(&cfg, &t.model, &t.reference, &t.batch).map_err(err)?;
                let e = fd_error(&t.model, &g, |m| combined_loss(&cfg, m, &t.reference, &t.batch).unwrap().total);
                record(format!("{loss}+{reg}"), e);
            }
        }
    }
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let (name, _) = worst.iter().find(|w| w.1 == max).unwrap();
    ensure!(max < 1e-4, "worst relative error {max:.3e} for {name}");
    Ok(format!(
        "{} objectives x {TRIALS} trials, worst relative error {max:.2e} ({name})",
        worst.len()
    ))
}

// ---------------------------------------------------------------------------
// 3. structural identities

fn c3_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_ga = 0.0f64;
    let mut worst_rgd = 0.0f64;
    for _ in 0..200 {
        let t = random_trial(&mut rng);
        let as_retain: Vec<RetainExample> = t
            .batch
            .forget
            .iter()
            .map(|e| retain_ex(&e.question, e.gold_answer.as_deref().unwrap()))
            .collect();
        let ga = loss_ga(&t.model, &t.batch.forget).map_err(err)?;
        let gd = loss_gd_reg(&t.model, &as_retain).map_err(err)?;
        worst_ga = worst_ga.max((ga + gd).abs());

        let relabeled: Vec<RetainExample> = t
            .batch
            .forget
            .iter()
            .map(|e| retain_ex(&e.question, e.relabel.as_deref().unwrap()))
            .collect();
        let rgd = loss_rgd(&t.model, &t.batch.forget).map_err(err)?;
        let gd_relabeled = loss_gd_reg(&t.model, &relabeled).map_err(err)?;
        worst_rgd = worst_rgd.max((rgd - gd_relabeled).abs());
        ensure!(loss_nauf(&t.model, &t.batch.forget).map_err(err)? == rgd, "NAUF and RGD differ on identical data");
    }
    ensure!(worst_ga < 1e-12, "GA + GD = {worst_ga:e}");
    ensure!(worst_rgd < 1e-12, "RGD - GD(relabeled) = {worst_rgd:e}");

    // As beta -> 0, NPO - 2 ln2 / beta tends to mean(ll_u - ll_o) and its
    // gradient to the GA gradient.
    let beta = 1e-3;
    let mut worst_value = 0.0f64;
    let mut worst_grad = 0.0f64;
    for _ in 0..50 {
        let t = random_trial(&mut rng);
        let f = &t.batch.forget;
        let npo = loss_npo(&t.model, &t.reference, f, beta).map_err(err)?;
        let mean_ref = -loss_ga(&t.reference, f).map_err(err)?;
        let limit = loss_ga(&t.model, f).map_err(err)? + mean_ref;
        worst_value = worst_value.max((npo - 2.0 * 2f64.ln() / beta - limit).abs());
        let (_, g_npo) = forget_loss_gradient(ForgetLoss::Npo, beta, &t.model, &t.reference, f).map_err(err)?;
        let (_, g_ga) = forget_loss_gradient(ForgetLoss::Ga, beta, &t.model, &t.reference, f).map_err(err)?;
        let n = t.model.parameters().len();
        let diff: f64 = (0..n).map(|i| (g_npo.get(i) - g_ga.get(i)).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = (0..n).map(|i| g_ga.get(i).powi(2)).sum::<f64>().sqrt();
        worst_grad = worst_grad.max(diff / norm.max(1e-300));
    }
    ensure!(worst_value < 1e-2, "NPO value limit off by {worst_value}");
    ensure!(worst_grad < 1e-2, "NPO gradient limit off by {worst_grad}");
    Ok(format!(
        "GA=-GD {worst_ga:.1e}, RGD=GD(relabel) {worst_rgd:.1e}, NPO(beta=1e-3) value {worst_value:.1e} gradient {worst_grad:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// 4. metric oracle

const WRONG: &str = "Nobody knows";

/// A tabular model whose greedy answer is gold where `script` says true and
/// a wrong answer elsewhere.
fn scripted(corpus: &Corpus, script: &HashMap<QaId, bool>) -> TabularModel {
    let questions = corpus.records.iter().flat_map(|r| r.qa_pairs.iter().map(|q| q.question.clone()));
    let answers = corpus
        .records
        .iter()
        .flat_map(|r| r.qa_pairs.iter().map(|q| q.gold_answer.clone()))
        .chain([WRONG.to_string()]);
    let mut m = TabularModel::new(questions, answers).unwrap();
    for r in &corpus.records {
        for (i, qa) in r.qa_pairs.iter().enumerate() {
            let right = script.get(&r.qa_id(i)).copied().unwrap_or(true);
            m.set_logit(&qa.question, if right { &qa.gold_answer } else { WRONG }, 5.0).unwrap();
        }
    }
    m
}

fn oracle_acc(script: &HashMap<QaId, bool>, ids: &[QaId]) -> f64 {
    let mut hits = 0;
    for id in ids {
        if script[id] {
            hits += 1;
        }
    }
    hits as f64 / ids.len() as f64
}

fn c4_metric_oracle() -> Outcome {
    let c = corpus(50, 4);
    let all: Vec<&PersonRecord> = c.records.iter().collect();
    let split = make_split(&all, Ratio::new(1, 9).unwrap(), 4).map_err(err)?;
    let forget_test = split.test_ids(Side::Forget);
    let retain_test = split.test_ids(Side::Retain);
    let judge = ExactMatchJudge;
    let every: Vec<QaId> = c.records.iter().flat_map(|r| (0..r.qa_pairs.len()).map(|i| r.qa_id(i))).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut max_dev = 0.0f64;
    for _ in 0..5 {
        let so: HashMap<QaId, bool> = every.iter().map(|id| (id.clone(), rng.gen_bool(0.85))).collect();
        let su: HashMap<QaId, bool> = every.iter().map(|id| (id.clone(), rng.gen_bool(0.5))).collect();
        let rep = evaluate(&scripted(&c, &so), &scripted(&c, &su), &split, &c, &judge, &[]).map_err(err)?.report;
        let (of, uf) = (oracle_acc(&so, &forget_test), oracle_acc(&su, &forget_test));
        let (or, ur) = (oracle_acc(&so, &retain_test), oracle_acc(&su, &retain_test));
        let fs = 1.0 - uf / of;
        let rs = ur / or;
        for (got, want) in [
            (rep.acc_o_forget, of),
            (rep.acc_u_forget, uf),
            (rep.acc_o_retain, or),
            (rep.acc_u_retain, ur),
            (rep.forget_score, fs),
            (rep.retain_score, rs),
            (rep.avg_unlearning_score, (fs + rs) / 2.0),
        ] {
            max_dev = max_dev.max((got - want).abs());
        }
    }
    ensure!(max_dev <= 1e-12, "scores deviate from the recount by {max_dev:e}");

    // Original model wrong on every forget-test question.
    let zero: HashMap<QaId, bool> = every.iter().map(|id| (id.clone(), !forget_test.contains(id))).collect();
    let res = evaluate(&scripted(&c, &zero), &scripted(&c, &zero), &split, &c, &judge, &[]);
    ensure!(
        matches!(res.as_ref().map_err(|e| e.root()), Err(Error::UndefinedScore("forget"))),
        "acc_o = 0 did not raise the undefined-score error: {:?}",
        res.map(|e| e.report)
    );

    // 0.8 -> 1.0 on the forget set.
    ensure!(forget_test.len() == 50, "expected 50 forget-test questions, got {}", forget_test.len());
    let mut so: HashMap<QaId, bool> = every.iter().map(|id| (id.clone(), true)).collect();
    for id in forget_test.iter().take(10) {
        so.insert(id.clone(), false);
    }
    let su: HashMap<QaId, bool> = every.iter().map(|id| (id.clone(), true)).collect();
    let rep = evaluate(&scripted(&c, &so), &scripted(&c, &su), &split, &c, &judge, &[]).map_err(err)?.report;
    ensure!(
        (rep.acc_o_forget - 0.8).abs() < 1e-12 && rep.acc_u_forget == 1.0,
        "accuracies {} / {}",
        rep.acc_o_forget,
        rep.acc_u_forget
    );
    ensure!((rep.forget_score + 0.25).abs() <= 1e-12, "forget score {}", rep.forget_score);
    ensure!(rep.negative_forget_score(), "negative forget score not flagged");
    let grid = render_grid(&[ReportRow::new("scripted", rep.clone())]);
    ensure!(grid.contains("-25.00*"), "grid does not flag the negative score:\n{grid}");
    Ok(format!(
        "max deviation {max_dev:.1e}; acc_o=0 rejected; 0.8->1.0 gives {:.2}",
        rep.forget_score
    ))
}

// ---------------------------------------------------------------------------
// 5. protocol invariants

fn check_partition(split: &SplitAssignment, corpus: &Corpus) -> Result<(), String> {
    let f: BTreeSet<&String> = split.forget_names.iter().collect();
    let r: BTreeSet<&String> = split.retain_names.iter().collect();
    ensure!(f.is_disjoint(&r), "forget and retain overlap");
    let all: BTreeSet<&String> = corpus.records.iter().map(|p| &p.name).collect();
    ensure!(f.union(&r).copied().collect::<BTreeSet<_>>() == all, "split does not cover every individual");
    for p in &corpus.records {
        let h = &split.halves[&p.name];
        ensure!(h.train.len() == h.test.len(), "{}: halves {}/{}", p.name, h.train.len(), h.test.len());
        let mut idx: Vec<usize> = h.train.iter().chain(&h.test).copied().collect();
        idx.sort_unstable();
        ensure!(idx == (0..p.qa_pairs.len()).collect::<Vec<_>>(), "{}: halves are not a partition", p.name);
    }
    Ok(())
}

fn perfect(corpus: &Corpus) -> TabularModel {
    scripted(corpus, &HashMap::new())
}

fn c5_protocol() -> Outcome {
    let c = corpus(60, 5);
    let all: Vec<&PersonRecord> = c.records.iter().collect();
    let ratio = Ratio::new(1, 9).unwrap();
    let split = make_split(&all, ratio, 5).map_err(err)?;
    check_partition(&split, &c)?;
    ensure!(split.forget_names.len() == 6, "1:9 of 60 gave {} forget individuals", split.forget_names.len());
    ensure!(
        make_split(&all, ratio, 5).map_err(err)?.to_json() == split.to_json(),
        "same seed gave a different split"
    );
    ensure!(make_split(&all, ratio, 6).map_err(err)? != split, "a different seed gave the same split");
    ensure!(Ratio::new(10, 90).unwrap().forget_count(466) == 46, "10:90 of 466 is not 46");

    let data = TrainingData::assemble(&split, &c, &[], ForgetLoss::Nauf, &RefusalTemplateSet::name_aware(), 5).map_err(err)?;
    let retain_pool: BTreeSet<&str> = data.retain.iter().map(|r| r.question.as_str()).collect();
    for reg in [Regularizer::Gd, Regularizer::Kld] {
        for batch_size in [8, 32] {
            let mut cfg = TrainConfig::for_backend(BackendKind::Tabular, LossConfig::new(ForgetLoss::Nauf, reg));
            cfg.batch_size = batch_size;
            for epoch in 1..=5 {
                let batches = make_epoch_schedule(&data, &cfg, epoch).map_err(err)?;
                let used: usize = batches.iter().map(|b| b.retain.len()).sum();
                ensure!(used == data.forget.len(), "{reg} epoch {epoch}: {used} retain for {} forget", data.forget.len());
                ensure!(
                    batches.iter().flat_map(|b| &b.retain).all(|r| retain_pool.contains(r.question.as_str())),
                    "retain example outside the retain training set"
                );
            }
        }
    }

    let m = perfect(&c);
    let ev: Evaluation = evaluate(&m, &m, &split, &c, &ExactMatchJudge, &[]).map_err(err)?;
    let seen: BTreeSet<&QaId> = ev.evaluated_ids().collect();
    let train: Vec<QaId> = split.train_ids(Side::Forget).into_iter().chain(split.train_ids(Side::Retain)).collect();
    ensure!(train.iter().all(|id| !seen.contains(id)), "evaluation touched a training question");
    let test: BTreeSet<QaId> = split.test_ids(Side::Forget).into_iter().chain(split.test_ids(Side::Retain)).collect();
    ensure!(seen == test.iter().collect(), "evaluation did not cover exactly the test halves");
    ensure!(
        ev.report.forget_score == 0.0 && ev.report.retain_score == 1.0,
        "unchanged model is not the oracle row"
    );
    Ok(format!(
        "partition ok, 6/54 individuals, 10/10 halves, retain budget {} per epoch, {} test ids evaluated",
        data.forget.len(),
        seen.len()
    ))
}

// ---------------------------------------------------------------------------
// 6. contrastive augmentation

fn small_neural(c: &Corpus, hidden: usize) -> TinyNeuralModel {
    let refusals: Vec<String> = RefusalTemplateSet::name_aware()
        .templates()
        .iter()
        .map(|t| t.replace("[NAME]", "X"))
        .collect();
    let texts = c
        .records
        .iter()
        .flat_map(|r| {
            std::iter::once(r.name.as_str())
                .chain(r.qa_pairs.iter().flat_map(|q| [q.question.as_str(), q.gold_answer.as_str()]))
        })
        .chain(refusals.iter().map(String::as_str));
    let cfg = NeuralConfig {
        question_dim: 8,
        token_dim: 8,
        position_dim: 4,
        hidden,
        max_answer_tokens: 31,
        init_seed: 6,
    };
    TinyNeuralModel::new(Vocabulary::build(texts), cfg).unwrap()
}

fn c6_cda() -> Outcome {
    let c = corpus(20, 6);
    let all: Vec<&PersonRecord> = c.records.iter().collect();
    let split = make_split(&all, Ratio::new(1, 9).unwrap(), 6).map_err(err)?;
    let frozen = Frozen::new(small_neural(&c, 16));
    let refusals = RefusalTemplateSet::name_aware();
    let default = AugmentOptions { per_person: None, seed: 6 };
    let aug = augment(&split, &c, &*frozen, &refusals, default).map_err(err)?;

    for a in &aug {
        ensure!(!a.question.contains(&a.donor_name), "{:?} mentions donor {}", a.question, a.donor_name);
        ensure!(a.question.contains(&a.target_name), "{:?} lacks target {}", a.question, a.target_name);
        match a.side {
            Side::Forget => {
                ensure!(a.answer.contains(&a.target_name), "refusal {:?} lacks {}", a.answer, a.target_name)
            }
            Side::Retain => {
                let again = frozen.generate(&a.question).map_err(err)?;
                ensure!(again == a.answer, "self-label {:?} != {:?}", a.answer, again);
            }
        }
    }
    for name in split.all_names() {
        let n = aug.iter().filter(|a| &a.target_name == name).count();
        ensure!(n == split.halves[name].train.len(), "{name}: {n} augmented for {} train", split.halves[name].train.len());
    }
    ensure!(
        augment(&split, &c, &*frozen, &refusals, default).map_err(err)? == aug,
        "augmentation is not deterministic"
    );

    let mut sweep = Vec::new();
    for k in [0, 5, 10, 20, 40] {
        let a: Vec<AugmentedExample> =
            augment(&split, &c, &*frozen, &refusals, AugmentOptions { per_person: Some(k), seed: 6 }).map_err(err)?;
        for name in split.all_names() {
            let n = a.iter().filter(|x| &x.target_name == name).count();
            ensure!(n == k, "per_person={k}: {name} got {n}");
        }
        let data = TrainingData::assemble(&split, &c, &a, ForgetLoss::Nauf, &refusals, 6).map_err(err)?;
        sweep.push(format!("{k}:{}", data.forget.len()));
        if k == 40 {
            let mut cfg = TrainConfig::for_backend(BackendKind::Neural, LossConfig::new(ForgetLoss::Nauf, Regularizer::Gd));
            cfg.epochs = 1;
            let run = run_unlearning(&frozen, &data, &cfg, |_, _| Ok(())).map_err(err)?;
            ensure!(!run.trace.is_empty(), "per_person=40 training produced no steps");
        }
    }
    Ok(format!(
        "{} augmented examples; forget examples per sweep point {}",
        aug.len(),
        sweep.join(" ")
    ))
}

// ---------------------------------------------------------------------------
// 7. tabular end to end

fn memorized_split<M: LanguageModel>(base: &M, c: &Corpus, seed: u64) -> Result<SplitAssignment, String> {
    let all: Vec<&PersonRecord> = c.records.iter().collect();
    let table = profile_memorization(base, &all, &ExactMatchJudge, 0.8).map_err(err)?;
    let names = select_memorized(&table, 0.8);
    ensure!(names.len() >= 10, "only {} individuals memorized", names.len());
    let mem: Vec<&PersonRecord> = names.iter().map(|n| c.get(n).unwrap()).collect();
    make_split(&mem, Ratio::new(1, 9).unwrap(), seed).map_err(err)
}

fn train_and_score<M: LanguageModel>(
    base: &M,
    c: &Corpus,
    split: &SplitAssignment,
    loss: LossConfig,
    kind: BackendKind,
    on_train: bool,
) -> Result<UnlearningReport, String> {
    let templates = if loss.forget_loss == ForgetLoss::Nauf {
        RefusalTemplateSet::name_aware()
    } else {
        RefusalTemplateSet::uninformed()
    };
    let data = TrainingData::assemble(split, c, &[], loss.forget_loss, &templates, 0).map_err(err)?;
    let cfg = TrainConfig::for_backend(kind, loss);
    let frozen = Frozen::new(base.clone());
    let run = run_unlearning(&frozen, &data, &cfg, |_, _| Ok(())).map_err(err)?;
    let (f, r) = if on_train {
        (split.train_ids(Side::Forget), split.train_ids(Side::Retain))
    } else {
        (split.test_ids(Side::Forget), split.test_ids(Side::Retain))
    };
    Ok(evaluate_on(base, &run.model, c, &f, &r, &ExactMatchJudge, &[]).map_err(err)?.report)
}

fn c7_tabular() -> Outcome {
    let c = corpus(60, 7);
    let AnyModel::Tabular(base) = build_base_model(&c, &BaseModelOptions::for_backend(BackendKind::Tabular)).map_err(err)?
    else {
        unreachable!()
    };
    let split = memorized_split(&base, &c, 7)?;
    let plain = train_and_score(&base, &c, &split, LossConfig::new(ForgetLoss::Nauf, Regularizer::None), BackendKind::Tabular, true)?;
    ensure!(plain.forget_score == 1.0, "NAUF forget score on forget-train {}", plain.forget_score);
    let gd = train_and_score(&base, &c, &split, LossConfig::new(ForgetLoss::Nauf, Regularizer::Gd), BackendKind::Tabular, true)?;
    ensure!(gd.retain_score >= 0.95, "NAUF+GD retain score on retain-train {}", gd.retain_score);
    Ok(format!(
        "NAUF forget-train FS {:.4}; NAUF+GD retain-train RS {:.4} (FS {:.4})",
        plain.forget_score, gd.retain_score, gd.forget_score
    ))
}

// ---------------------------------------------------------------------------
// 8. neural end to end

fn c8_neural() -> Outcome {
    let c = corpus(60, 0);
    let AnyModel::Neural(base) = build_base_model(&c, &BaseModelOptions::for_backend(BackendKind::Neural)).map_err(err)?
    else {
        unreachable!()
    };
    let qa: Vec<_> = c.records.iter().flat_map(|r| r.qa_pairs.clone()).collect();
    let acc = unlearn_core::judge::accuracy(&ExactMatchJudge, &base, &qa).map_err(err)?;
    ensure!(acc >= 0.8, "base model accuracy {acc}");
    let split = memorized_split(&base, &c, 0)?;
    let nauf = train_and_score(&base, &c, &split, LossConfig::new(ForgetLoss::Nauf, Regularizer::Gd), BackendKind::Neural, false)?;
    let rgd = train_and_score(&base, &c, &split, LossConfig::new(ForgetLoss::Rgd, Regularizer::Gd), BackendKind::Neural, false)?;
    let direction = if nauf.retain_score >= rgd.retain_score {
        "NAUF retains at least as well as RGD"
    } else {
        "RGD retains better than NAUF on this run"
    };
    ensure!(
        nauf.forget_score >= 0.8 && nauf.retain_score >= 0.7,
        "NAUF+GD test FS {:.4} RS {:.4}",
        nauf.forget_score,
        nauf.retain_score
    );
    Ok(format!(
        "base accuracy {acc:.4}; NAUF+GD test FS {:.4} RS {:.4}; RGD+GD test FS {:.4} RS {:.4} ({direction})",
        nauf.forget_score, nauf.retain_score, rgd.forget_score, rgd.retain_score
    ))
}

// ---------------------------------------------------------------------------
// 9. epoch sweep and replay

fn sweep_for(kind: BackendKind, dir: &std::path::Path) -> Result<String, String> {
    let c = corpus(12, 9);
    let corpus_path = dir.join("corpus.jsonl");
    unlearn_core::corpus::save_corpus(&c, &corpus_path).map_err(err)?;
    let mut opts = BaseModelOptions::for_backend(kind);
    opts.probes = false;
    opts.neural.hidden = 48;
    let base = build_base_model(&c, &opts).map_err(err)?;
    let split = match &base {
        AnyModel::Tabular(m) => {
            m.save_checkpoint(dir.join("base.ckpt")).map_err(err)?;
            memorized_split(m, &c, 9)?
        }
        AnyModel::Neural(m) => {
            m.save_checkpoint(dir.join("base.ckpt")).map_err(err)?;
            memorized_split(m, &c, 9)?
        }
    };
    split.save(dir.join("split.json")).map_err(err)?;
    let cfg_path = dir.join("run.toml");
    std::fs::write(
        &cfg_path,
        format!(
            "seed = 9\n[backend]\nkind = \"{kind}\"\ncheckpoint = \"base.ckpt\"\n[data]\ncorpus = \"corpus.jsonl\"\nsplit = \"split.json\"\n\
             [objective]\nforget_loss = \"nauf\"\nregularizer = \"gd\"\n[train]\nepochs = 10\n[evaluation]\nprobes = false\n"
        ),
    )
    .map_err(|e| e.to_string())?;
    let cfg = ExperimentConfig::load(&cfg_path).map_err(err)?;
    let run_dir = dir.join("run");
    let manifest = run_experiment(&cfg, &cfg_path, &run_dir).map_err(err)?;
    ensure!(manifest.checkpoints.len() == 10, "{} checkpoints", manifest.checkpoints.len());
    let manifest_path = run_dir.join(unlearn_core::experiment::MANIFEST_FILE);
    let rows = epoch_sweep(&manifest_path, &[1, 3, 5, 10], &ExactMatchJudge).map_err(err)?;
    let grid = render_grid(&rows);
    ensure!(grid.lines().filter(|l| l.starts_with("epoch ")).count() == 4, "sweep grid:\n{grid}");
    let outcome = replay(&manifest_path, &dir.join("replay")).map_err(err)?;
    ensure!(outcome.identical(), "{kind}: replay differs in {:?}", outcome.mismatches);
    let fs: Vec<String> = rows.iter().map(|r| format!("{:.2}", r.report.forget_score)).collect();
    Ok(format!("{kind} FS@1,3,5,10 = {}", fs.join("/")))
}

fn c9_sweep() -> Outcome {
    let mut parts = Vec::new();
    for kind in [BackendKind::Tabular, BackendKind::Neural] {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        parts.push(sweep_for(kind, dir.path())?);
    }
    Ok(format!("replays byte-identical; {}", parts.join("; ")))
}

// ---------------------------------------------------------------------------

type Criterion = (&'static str, Option<u64>, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("analytic loss values", Some(1), c1_analytic),
        ("gradient correctness", Some(30), c2_gradients),
        ("structural identities", Some(10), c3_identities),
        ("metric oracle", None, c4_metric_oracle),
        ("protocol invariants", None, c5_protocol),
        ("contrastive augmentation", None, c6_cda),
        ("tabular end to end", Some(60), c7_tabular),
        ("neural end to end", Some(900), c8_neural),
        ("epoch sweep and replay", None, c9_sweep),
    ];
    let filter = std::env::args().nth(1).and_then(|a| a.parse::<usize>().ok());
    let mut failures = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if filter.is_some_and(|f| f != n) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let over = budget.is_some_and(|b| elapsed > Duration::from_secs(b));
        let (status, detail) = match outcome {
            Ok(d) if over => ("FAIL", format!("{d}; exceeded {}s budget", budget.unwrap())),
            Ok(d) => ("PASS", d),
            Err(e) => ("FAIL", e),
        };
        if status == "FAIL" {
            failures += 1;
        }
        println!("criterion {n} {status} {name} [{:.1}s]: {detail}", elapsed.as_secs_f64());
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
