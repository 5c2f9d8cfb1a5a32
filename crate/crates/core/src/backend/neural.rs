//! A small word-level answer generator with exact backpropagation.
//!
//! The question is encoded as the sum of its token embeddings. Each answer
//! position is predicted from that encoding, the two previous answer tokens
//! and a position embedding through one tanh layer:
//!
//! ```text
//! e   = sum_i Q[x_i]
//! z_t = [e ; T[y_{t-1}] ; T[y_{t-2}] ; P[t]]
//! h_t = tanh(W1 z_t + b1)
//! p_t = softmax(W2 h_t + b2)
//! ```
//!
//! Answers end with an explicit end-of-sequence token, so the answer
//! log-likelihood is the sum of per-token log-probabilities including it.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tokenizer::Vocabulary;
use super::{BackendKind, DenseGradient, LanguageModel};
use crate::util::softmax_into;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuralConfig {
    pub question_dim: usize,
    pub token_dim: usize,
    pub position_dim: usize,
    pub hidden: usize,
    /// Longest answer, in tokens, excluding the end marker.
    pub max_answer_tokens: usize,
    pub init_seed: u64,
}

impl Default for NeuralConfig {
    fn default() -> Self {
        Self {
            question_dim: 48,
            token_dim: 32,
            position_dim: 16,
            hidden: 192,
            max_answer_tokens: 31,
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layout {
    vocab: usize,
    input: usize,
    positions: usize,
    q_emb: usize,
    tok_emb: usize,
    pos_emb: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    total: usize,
}

impl Layout {
    fn new(vocab: usize, c: &NeuralConfig) -> Self {
        let input = c.question_dim + 2 * c.token_dim + c.position_dim;
        let positions = c.max_answer_tokens + 1;
        let q_emb = 0;
        let tok_emb = q_emb + vocab * c.question_dim;
        let pos_emb = tok_emb + vocab * c.token_dim;
        let w1 = pos_emb + positions * c.position_dim;
        let b1 = w1 + c.hidden * input;
        let w2 = b1 + c.hidden;
        let b2 = w2 + vocab * c.hidden;
        let total = b2 + vocab;
        Self {
            vocab,
            input,
            positions,
            q_emb,
            tok_emb,
            pos_emb,
            w1,
            b1,
            w2,
            b2,
            total,
        }
    }

    /// (name, offset, rows, cols) of every parameter block.
    fn blocks(&self, c: &NeuralConfig) -> [(&'static str, usize, usize, usize); 7] {
        [
            ("question_embedding", self.q_emb, self.vocab, c.question_dim),
            ("token_embedding", self.tok_emb, self.vocab, c.token_dim),
            ("position_embedding", self.pos_emb, self.positions, c.position_dim),
            ("hidden_weight", self.w1, c.hidden, self.input),
            ("hidden_bias", self.b1, 1, c.hidden),
            ("output_weight", self.w2, self.vocab, c.hidden),
            ("output_bias", self.b2, 1, self.vocab),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct TinyNeuralModel {
    vocab: Arc<Vocabulary>,
    config: NeuralConfig,
    layout: Layout,
    params: Vec<f64>,
}

struct Step {
    prev1: u32,
    prev2: u32,
    pos: usize,
    z: Vec<f64>,
    h: Vec<f64>,
    probs: Vec<f64>,
    log_norm: f64,
    logits: Vec<f64>,
}

impl Step {
    fn log_prob(&self, token: u32) -> f64 {
        self.logits[token as usize] - self.log_norm
    }
}

impl TinyNeuralModel {
    pub fn new(vocab: Vocabulary, config: NeuralConfig) -> Result<Self> {
        if vocab.is_empty() {
            return Err(Error::InvalidArgument("neural model needs a non-empty vocabulary".into()));
        }
        if config.hidden == 0 || config.question_dim == 0 || config.max_answer_tokens == 0 {
            return Err(Error::InvalidArgument("neural model dimensions must be positive".into()));
        }
        let layout = Layout::new(vocab.len(), &config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut params = vec![0.0; layout.total];
        let mut fill = |range: std::ops::Range<usize>, bound: f64| {
            for x in &mut params[range] {
                *x = rng.gen_range(-bound..bound);
            }
        };
        fill(layout.q_emb..layout.tok_emb, 0.1);
        fill(layout.tok_emb..layout.pos_emb, 0.1);
        fill(layout.pos_emb..layout.w1, 0.1);
        fill(layout.w1..layout.b1, (6.0 / (layout.input + config.hidden) as f64).sqrt());
        fill(layout.w2..layout.b2, (6.0 / (config.hidden + layout.vocab) as f64).sqrt());
        Ok(Self {
            vocab: Arc::new(vocab),
            config,
            layout,
            params,
        })
    }

    pub(crate) fn from_parts(vocab: Vocabulary, config: NeuralConfig, params: Vec<f64>) -> Result<Self> {
        let layout = Layout::new(vocab.len(), &config);
        if params.len() != layout.total {
            return Err(Error::InvalidArgument(format!(
                "parameter vector has {} entries, expected {}",
                params.len(),
                layout.total
            )));
        }
        Ok(Self {
            vocab: Arc::new(vocab),
            config,
            layout,
            params,
        })
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn config(&self) -> &NeuralConfig {
        &self.config
    }

    pub fn num_parameters(&self) -> usize {
        self.layout.total
    }

    pub(crate) fn blocks(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        self.layout
            .blocks(&self.config)
            .iter()
            .map(|&(name, off, rows, cols)| (name, vec![rows, cols], &self.params[off..off + rows * cols]))
            .collect()
    }

    fn encode_question(&self, question: &str) -> Result<(Vec<u32>, Vec<f64>)> {
        let ids = self.vocab.encode(question)?;
        if ids.is_empty() {
            return Err(Error::InvalidArgument("empty question".into()));
        }
        let d = self.config.question_dim;
        let mut e = vec![0.0; d];
        for &id in &ids {
            let row = &self.params[self.layout.q_emb + id as usize * d..][..d];
            for (a, b) in e.iter_mut().zip(row) {
                *a += b;
            }
        }
        Ok((ids, e))
    }

    fn encode_answer(&self, answer: &str) -> Result<Vec<u32>> {
        let mut ids = self.vocab.encode(answer)?;
        if ids.len() > self.config.max_answer_tokens {
            return Err(Error::InvalidArgument(format!(
                "answer has {} tokens, limit is {}",
                ids.len(),
                self.config.max_answer_tokens
            )));
        }
        ids.push(Vocabulary::EOS_ID);
        Ok(ids)
    }

    fn step(&self, e: &[f64], prev1: u32, prev2: u32, pos: usize) -> Step {
        let c = &self.config;
        let l = &self.layout;
        let p = &self.params;
        let mut z = Vec::with_capacity(l.input);
        z.extend_from_slice(e);
        z.extend_from_slice(&p[l.tok_emb + prev1 as usize * c.token_dim..][..c.token_dim]);
        z.extend_from_slice(&p[l.tok_emb + prev2 as usize * c.token_dim..][..c.token_dim]);
        z.extend_from_slice(&p[l.pos_emb + pos * c.position_dim..][..c.position_dim]);

        let mut h = vec![0.0; c.hidden];
        for (j, hj) in h.iter_mut().enumerate() {
            let w = &p[l.w1 + j * l.input..][..l.input];
            let a: f64 = p[l.b1 + j] + w.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
            *hj = a.tanh();
        }

        let mut logits = vec![0.0; l.vocab];
        for (v, lv) in logits.iter_mut().enumerate() {
            let w = &p[l.w2 + v * c.hidden..][..c.hidden];
            *lv = p[l.b2 + v] + w.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
        }
        let mut probs = vec![0.0; l.vocab];
        let log_norm = softmax_into(&logits, &mut probs);
        Step {
            prev1,
            prev2,
            pos,
            z,
            h,
            probs,
            log_norm,
            logits,
        }
    }

    fn teacher_forced(&self, e: &[f64], targets: &[u32]) -> Vec<Step> {
        (0..targets.len())
            .map(|t| {
                let prev1 = if t >= 1 { targets[t - 1] } else { Vocabulary::BOS_ID };
                let prev2 = if t >= 2 { targets[t - 2] } else { Vocabulary::BOS_ID };
                self.step(e, prev1, prev2, t)
            })
            .collect()
    }

    /// Backpropagates per-step output gradients `dlogits` (same order as
    /// `steps`) into `grad`.
    fn backward(&self, q_ids: &[u32], steps: &[Step], dlogits: &[Vec<f64>], grad: &mut [f64]) {
        let c = &self.config;
        let l = &self.layout;
        let p = &self.params;
        let mut de = vec![0.0; c.question_dim];
        let mut dh = vec![0.0; c.hidden];
        let mut dz = vec![0.0; l.input];
        for (s, g) in steps.iter().zip(dlogits) {
            dh.iter_mut().for_each(|x| *x = 0.0);
            for (v, &gv) in g.iter().enumerate() {
                if gv == 0.0 {
                    continue;
                }
                grad[l.b2 + v] += gv;
                let w = &p[l.w2 + v * c.hidden..][..c.hidden];
                let dw = &mut grad[l.w2 + v * c.hidden..][..c.hidden];
                for ((dwk, hk), (dhk, wk)) in dw.iter_mut().zip(&s.h).zip(dh.iter_mut().zip(w)) {
                    *dwk += gv * hk;
                    *dhk += gv * wk;
                }
            }
            dz.iter_mut().for_each(|x| *x = 0.0);
            for j in 0..c.hidden {
                let da = dh[j] * (1.0 - s.h[j] * s.h[j]);
                if da == 0.0 {
                    continue;
                }
                grad[l.b1 + j] += da;
                let w = &p[l.w1 + j * l.input..][..l.input];
                let dw = &mut grad[l.w1 + j * l.input..][..l.input];
                for ((dwk, zk), (dzk, wk)) in dw.iter_mut().zip(&s.z).zip(dz.iter_mut().zip(w)) {
                    *dwk += da * zk;
                    *dzk += da * wk;
                }
            }
            let (dz_e, rest) = dz.split_at(c.question_dim);
            let (dz_p1, rest) = rest.split_at(c.token_dim);
            let (dz_p2, dz_pos) = rest.split_at(c.token_dim);
            for (a, b) in de.iter_mut().zip(dz_e) {
                *a += b;
            }
            for (prev, part) in [(s.prev1, dz_p1), (s.prev2, dz_p2)] {
                let dst = &mut grad[l.tok_emb + prev as usize * c.token_dim..][..c.token_dim];
                for (a, b) in dst.iter_mut().zip(part) {
                    *a += b;
                }
            }
            let dst = &mut grad[l.pos_emb + s.pos * c.position_dim..][..c.position_dim];
            for (a, b) in dst.iter_mut().zip(dz_pos) {
                *a += b;
            }
        }
        for &id in q_ids {
            let dst = &mut grad[l.q_emb + id as usize * c.question_dim..][..c.question_dim];
            for (a, b) in dst.iter_mut().zip(&de) {
                *a += b;
            }
        }
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.config != other.config || !(Arc::ptr_eq(&self.vocab, &other.vocab) || self.vocab == other.vocab) {
            return Err(Error::VocabularyMismatch);
        }
        Ok(())
    }

    /// Per-position KL terms and both models' step caches.
    fn kl_steps(&self, reference: &Self, question: &str, answer: &str) -> Result<(Vec<u32>, Vec<Step>, Vec<Step>)> {
        self.check_compatible(reference)?;
        let targets = self.encode_answer(answer)?;
        let (q_ids, e) = self.encode_question(question)?;
        let (_, e_ref) = reference.encode_question(question)?;
        let mine = self.teacher_forced(&e, &targets);
        let theirs = reference.teacher_forced(&e_ref, &targets);
        Ok((q_ids, mine, theirs))
    }
}

fn step_kl(reference: &Step, model: &Step) -> f64 {
    reference
        .probs
        .iter()
        .zip(reference.logits.iter().zip(&model.logits))
        .map(|(&pr, (&lr, &lu))| {
            if pr > 0.0 {
                pr * ((lr - reference.log_norm) - (lu - model.log_norm))
            } else {
                0.0
            }
        })
        .sum::<f64>()
        .max(0.0)
}

impl LanguageModel for TinyNeuralModel {
    type Gradient = DenseGradient;

    fn kind(&self) -> BackendKind {
        BackendKind::Neural
    }

    fn answer_log_likelihood(&self, question: &str, answer: &str) -> Result<f64> {
        let targets = self.encode_answer(answer)?;
        let (_, e) = self.encode_question(question)?;
        let steps = self.teacher_forced(&e, &targets);
        Ok(steps.iter().zip(&targets).map(|(s, &y)| s.log_prob(y)).sum())
    }

    fn accumulate_log_likelihood<F>(&self, question: &str, answer: &str, grad: &mut DenseGradient, weight: F) -> Result<f64>
    where
        F: FnOnce(f64) -> Result<f64>,
    {
        let targets = self.encode_answer(answer)?;
        let (q_ids, e) = self.encode_question(question)?;
        let steps = self.teacher_forced(&e, &targets);
        let ll: f64 = steps.iter().zip(&targets).map(|(s, &y)| s.log_prob(y)).sum();
        let w = weight(ll)?;
        if w != 0.0 {
            let dlogits: Vec<Vec<f64>> = steps
                .iter()
                .zip(&targets)
                .map(|(s, &y)| {
                    let mut g: Vec<f64> = s.probs.iter().map(|p| -w * p).collect();
                    g[y as usize] += w;
                    g
                })
                .collect();
            self.backward(&q_ids, &steps, &dlogits, &mut grad.0);
        }
        Ok(ll)
    }

    fn kl_from_reference(&self, reference: &Self, question: &str, answer: &str) -> Result<f64> {
        let (_, mine, theirs) = self.kl_steps(reference, question, answer)?;
        let n = mine.len() as f64;
        Ok(theirs.iter().zip(&mine).map(|(r, m)| step_kl(r, m)).sum::<f64>() / n)
    }

    fn accumulate_kl_from_reference(
        &self,
        reference: &Self,
        question: &str,
        answer: &str,
        scale: f64,
        grad: &mut DenseGradient,
    ) -> Result<f64> {
        let (q_ids, mine, theirs) = self.kl_steps(reference, question, answer)?;
        let n = mine.len() as f64;
        let kl = theirs.iter().zip(&mine).map(|(r, m)| step_kl(r, m)).sum::<f64>() / n;
        if scale != 0.0 {
            let w = scale / n;
            let dlogits: Vec<Vec<f64>> = mine
                .iter()
                .zip(&theirs)
                .map(|(m, r)| m.probs.iter().zip(&r.probs).map(|(pu, po)| w * (pu - po)).collect())
                .collect();
            self.backward(&q_ids, &mine, &dlogits, &mut grad.0);
        }
        Ok(kl)
    }

    fn generate(&self, question: &str) -> Result<String> {
        let (_, e) = self.encode_question(question)?;
        let mut out: Vec<u32> = Vec::new();
        for t in 0..self.config.max_answer_tokens {
            let prev1 = if t >= 1 { out[t - 1] } else { Vocabulary::BOS_ID };
            let prev2 = if t >= 2 { out[t - 2] } else { Vocabulary::BOS_ID };
            let s = self.step(&e, prev1, prev2, t);
            // BOS is never emitted, nor tokens that would not decode back to
            // themselves; ties go to the lowest id
            let prev = out.last().copied();
            let mut best = Vocabulary::EOS_ID as usize;
            for (i, &x) in s.logits.iter().enumerate().skip(best + 1) {
                if x > s.logits[best] && self.vocab.can_follow(prev, i as u32) {
                    best = i;
                }
            }
            if best == Vocabulary::EOS_ID as usize {
                break;
            }
            out.push(best as u32);
        }
        Ok(self.vocab.decode(&out))
    }

    fn zero_gradient(&self) -> DenseGradient {
        DenseGradient(vec![0.0; self.layout.total])
    }

    fn parameters(&self) -> &[f64] {
        &self.params
    }

    fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::GradientBuffer;

    fn small() -> TinyNeuralModel {
        let vocab = Vocabulary::build(["Where was Ada Quill born?", "Oslo", "Lima, Peru.", "Who is Bo?"]);
        TinyNeuralModel::new(
            vocab,
            NeuralConfig {
                question_dim: 4,
                token_dim: 3,
                position_dim: 2,
                hidden: 5,
                max_answer_tokens: 6,
                init_seed: 3,
            },
        )
        .unwrap()
    }

    fn fd_check(m: &TinyNeuralModel, analytic: &DenseGradient, f: impl Fn(&TinyNeuralModel) -> f64) {
        let mut worst: f64 = 0.0;
        for i in 0..m.num_parameters() {
            let h = 1e-5;
            let mut plus = m.clone();
            plus.parameters_mut()[i] += h;
            let mut minus = m.clone();
            minus.parameters_mut()[i] -= h;
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            let a = analytic.get(i);
            let err = (fd - a).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn likelihood_gradient_matches_finite_differences() {
        let m = small();
        let (ll, g) = m.log_likelihood_gradient("Where was Ada Quill born?", "Lima, Peru.").unwrap();
        assert!(ll.is_finite() && ll < 0.0);
        fd_check(&m, &g, |m| m.answer_log_likelihood("Where was Ada Quill born?", "Lima, Peru.").unwrap());
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let reference = small();
        let mut m = small();
        for (i, x) in m.parameters_mut().iter_mut().enumerate() {
            *x += 0.05 * ((i * 7919 % 13) as f64 - 6.0) / 6.0;
        }
        let mut g = m.zero_gradient();
        let kl = m
            .accumulate_kl_from_reference(&reference, "Who is Bo?", "Oslo", 1.0, &mut g)
            .unwrap();
        assert!(kl > 0.0);
        fd_check(&m, &g, |m| m.kl_from_reference(&reference, "Who is Bo?", "Oslo").unwrap());
        assert_eq!(reference.kl_from_reference(&reference, "Who is Bo?", "Oslo").unwrap(), 0.0);
    }

    #[test]
    fn per_token_log_probs_sum_to_answer_likelihood() {
        let m = small();
        let targets = m.encode_answer("Lima, Peru.").unwrap();
        let (_, e) = m.encode_question("Who is Bo?").unwrap();
        let steps = m.teacher_forced(&e, &targets);
        let total: f64 = steps.iter().zip(&targets).map(|(s, &y)| s.log_prob(y)).sum();
        assert_eq!(total, m.answer_log_likelihood("Who is Bo?", "Lima, Peru.").unwrap());
        assert_eq!(targets.len(), 5);
    }

    #[test]
    fn oov_tokens_are_named() {
        let m = small();
        match m.answer_log_likelihood("Where was Ada Quill born?", "Paris") {
            Err(Error::OutOfVocabulary(t)) => assert_eq!(t, "Paris"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn generation_is_deterministic_and_frozen_copy_matches() {
        let m = small();
        let frozen = m.clone_frozen();
        let a = m.generate("Where was Ada Quill born?").unwrap();
        assert_eq!(a, m.generate("Where was Ada Quill born?").unwrap());
        assert_eq!(a, frozen.generate("Where was Ada Quill born?").unwrap());
    }

    #[test]
    fn overlong_answers_are_rejected() {
        let m = small();
        assert!(m
            .answer_log_likelihood("Who is Bo?", "Oslo Oslo Oslo Oslo Oslo Oslo Oslo")
            .is_err());
    }
}
