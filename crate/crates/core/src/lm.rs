//! Bidirectional LSTM language model.
//!
//! One stacked LSTM is shared by both directions. The forward pass predicts
//! `x_i` from `x_0..x_{i-1}`, the reverse pass from `x_{n-1}..x_{i+1}`, and
//! the position score is the sum of the two log-probabilities. Learned
//! initial states make the boundary positions well defined.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::data::{one_hot, Token, NUM_CANONICAL, NUM_TOKENS, UNKNOWN};
use crate::error::{Error, Result};
use crate::nn::activation::log_softmax_in_place;
use crate::nn::lstm::SequenceTrace;
use crate::nn::params::join;
use crate::nn::{Adam, AdamConfig, Linear, LstmCell, Params, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub hidden: usize,
    pub layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            hidden: 128,
            layers: 2,
            epochs: 1,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LanguageModel {
    pub layers: Vec<LstmCell>,
    pub h0: Vec<Tensor>,
    pub c0: Vec<Tensor>,
    /// Top hidden state to 20 residue logits.
    pub output: Linear,
}

struct DirectionPass {
    traces: Vec<SequenceTrace>,
    /// Row `k` holds log-probabilities for the `k`-th token read in this direction.
    logprobs: Tensor,
}

impl LanguageModel {
    pub fn init<R: Rng + ?Sized>(hidden: usize, layers: usize, rng: &mut R) -> Self {
        assert!(hidden >= 1 && layers >= 1, "language model needs hidden >= 1 and layers >= 1");
        LanguageModel {
            layers: (0..layers)
                .map(|l| LstmCell::init(if l == 0 { NUM_TOKENS } else { hidden }, hidden, rng))
                .collect(),
            h0: vec![Tensor::zeros(&[hidden]); layers],
            c0: vec![Tensor::zeros(&[hidden]); layers],
            output: Linear::init(hidden, NUM_CANONICAL, rng),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.output.input_dim()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Width of [`LanguageModel::hidden_states`] rows.
    pub fn state_dim(&self) -> usize {
        2 * self.num_layers() * self.hidden_dim()
    }

    fn run_stack(&self, tokens: &[Token]) -> Result<Vec<SequenceTrace>> {
        let mut traces: Vec<SequenceTrace> = Vec::with_capacity(self.layers.len());
        let x = one_hot(tokens);
        for (l, cell) in self.layers.iter().enumerate() {
            let input = traces.last().map_or(&x, |t| &t.hs);
            let tr = cell.run(input, self.h0[l].data(), self.c0[l].data())?;
            traces.push(tr);
        }
        Ok(traces)
    }

    /// State used to predict the `k`-th token of a direction.
    fn predictor<'a>(&'a self, traces: &'a [SequenceTrace], k: usize) -> &'a [f64] {
        let top = self.layers.len() - 1;
        if k == 0 {
            self.h0[top].data()
        } else {
            traces[top].hs.row(k - 1)
        }
    }

    fn direction(&self, tokens: &[Token]) -> Result<DirectionPass> {
        let traces = self.run_stack(tokens)?;
        let mut logprobs = Tensor::zeros(&[tokens.len(), NUM_CANONICAL]);
        for k in 0..tokens.len() {
            let row = logprobs.row_mut(k);
            self.output.forward_into(self.predictor(&traces, k), row);
            log_softmax_in_place(row);
        }
        Ok(DirectionPass { traces, logprobs })
    }

    fn direction_backward(&self, tokens: &[Token], pass: &DirectionPass, dlogprobs: &Tensor, grads: &mut Self) {
        let n = tokens.len();
        let top = self.layers.len() - 1;
        let hd = self.hidden_dim();
        let mut dhs = Tensor::zeros(&[n, hd]);
        let mut dh0_top = vec![0.0; hd];
        let mut dlogits = vec![0.0; NUM_CANONICAL];
        for k in 0..n {
            let g = dlogprobs.row(k);
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            let total: f64 = g.iter().sum();
            for (c, dl) in dlogits.iter_mut().enumerate() {
                *dl = g[c] - pass.logprobs.get2(k, c).exp() * total;
            }
            let dstate = if k == 0 { &mut dh0_top[..] } else { dhs.row_mut(k - 1) };
            self.output.backward_into(
                self.predictor(&pass.traces, k),
                &dlogits,
                &mut grads.output,
                Some(dstate),
            );
        }
        for (a, b) in grads.h0[top].data_mut().iter_mut().zip(&dh0_top) {
            *a += b;
        }
        for l in (0..self.layers.len()).rev() {
            let (dxs, dh0, dc0) = self.layers[l].run_backward(&pass.traces[l], &dhs, &mut grads.layers[l]);
            for (a, b) in grads.h0[l].data_mut().iter_mut().zip(&dh0) {
                *a += b;
            }
            for (a, b) in grads.c0[l].data_mut().iter_mut().zip(&dc0) {
                *a += b;
            }
            dhs = dxs;
        }
    }

    /// `log p^F(x_i) + log p^R(x_i)`.
    pub fn position_logprob(&self, tokens: &[Token], i: usize) -> Result<f64> {
        if i >= tokens.len() {
            return Err(Error::shape(format!("position {i} out of range for length {}", tokens.len())));
        }
        let t = tokens[i];
        if t == UNKNOWN {
            return Err(Error::data(format!("position {i} holds the unknown token")));
        }
        let rev: Vec<Token> = tokens.iter().rev().copied().collect();
        let f = self.direction(tokens)?;
        let r = self.direction(&rev)?;
        Ok(f.logprobs.get2(i, t as usize) + r.logprobs.get2(tokens.len() - 1 - i, t as usize))
    }

    /// Summed negative log-likelihood over scored positions of one sequence
    /// and the number of scored positions. Accumulates into `grads` when given.
    pub fn sequence_nll(&self, tokens: &[Token], grads: Option<&mut Self>) -> Result<(f64, usize)> {
        if tokens.is_empty() {
            return Err(Error::Empty("sequence"));
        }
        let n = tokens.len();
        let rev: Vec<Token> = tokens.iter().rev().copied().collect();
        let f = self.direction(tokens)?;
        let r = self.direction(&rev)?;
        let mut nll = 0.0;
        let mut count = 0;
        for (i, &t) in tokens.iter().enumerate() {
            if t != UNKNOWN {
                nll -= f.logprobs.get2(i, t as usize) + r.logprobs.get2(n - 1 - i, t as usize);
                count += 1;
            }
        }
        if let Some(grads) = grads {
            let mut df = Tensor::zeros(&[n, NUM_CANONICAL]);
            let mut dr = Tensor::zeros(&[n, NUM_CANONICAL]);
            for (i, &t) in tokens.iter().enumerate() {
                if t != UNKNOWN {
                    df.set2(i, t as usize, -1.0);
                    dr.set2(n - 1 - i, t as usize, -1.0);
                }
            }
            self.direction_backward(tokens, &f, &df, grads);
            self.direction_backward(&rev, &r, &dr, grads);
        }
        Ok((nll, count))
    }

    /// Frozen features: per position the hidden state of every layer after
    /// the forward pass has read `x_0..x_i`, then the same for the reverse
    /// pass after `x_{n-1}..x_i`.
    pub fn hidden_states(&self, tokens: &[Token]) -> Result<Tensor> {
        if tokens.is_empty() {
            return Err(Error::Empty("sequence"));
        }
        let n = tokens.len();
        let hd = self.hidden_dim();
        let rev: Vec<Token> = tokens.iter().rev().copied().collect();
        let f = self.run_stack(tokens)?;
        let r = self.run_stack(&rev)?;
        let nl = self.layers.len();
        let mut out = Tensor::zeros(&[n, self.state_dim()]);
        for i in 0..n {
            let row = out.row_mut(i);
            for l in 0..nl {
                row[l * hd..(l + 1) * hd].copy_from_slice(f[l].hs.row(i));
                row[(nl + l) * hd..(nl + l + 1) * hd].copy_from_slice(r[l].hs.row(n - 1 - i));
            }
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(json!({
            "kind": "language-model",
            "hidden": self.hidden_dim(),
            "layers": self.num_layers(),
        }));
        ck.push_params("lm", self);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let field = |k: &str| {
            ck.metadata
                .get(k)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .ok_or_else(|| Error::Checkpoint(format!("language-model metadata lacks {k}")))
        };
        if ck.metadata.get("kind").and_then(|v| v.as_str()) != Some("language-model") {
            return Err(Error::Checkpoint("not a language-model checkpoint".into()));
        }
        let (hidden, layers) = (field("hidden")?, field("layers")?);
        if hidden == 0 || layers == 0 {
            return Err(Error::Checkpoint("language-model dims must be positive".into()));
        }
        let mut lm = LanguageModel::init(hidden, layers, &mut ChaCha8Rng::seed_from_u64(0));
        ck.load_params("lm", &mut lm)?;
        Ok(lm)
    }
}

impl Params for LanguageModel {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.layers.visit(&join(prefix, "layer"), f);
        self.h0.visit(&join(prefix, "h0"), f);
        self.c0.visit(&join(prefix, "c0"), f);
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.layers.visit_mut(&join(prefix, "layer"), f);
        self.h0.visit_mut(&join(prefix, "h0"), f);
        self.c0.visit_mut(&join(prefix, "c0"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

/// Mean of `-(log p^F + log p^R)` over every scored position in the batch.
pub fn lm_loss(model: &LanguageModel, batch: &[Vec<Token>]) -> Result<f64> {
    let parts: Vec<Result<(f64, usize)>> = batch.par_iter().map(|s| model.sequence_nll(s, None)).collect();
    let mut nll = 0.0;
    let mut count = 0;
    for p in parts {
        let (a, b) = p?;
        nll += a;
        count += b;
    }
    if count == 0 {
        return Err(Error::Empty("scored language-model positions"));
    }
    Ok(nll / count as f64)
}

/// Batch loss and gradient of the mean loss. Per-sequence gradients are
/// computed in parallel and summed in input order.
pub fn lm_loss_and_grad(model: &LanguageModel, batch: &[Vec<Token>]) -> Result<(f64, LanguageModel)> {
    let parts: Vec<Result<(f64, usize, LanguageModel)>> = batch
        .par_iter()
        .map(|s| {
            let mut g = model.zeros_like();
            let (nll, count) = model.sequence_nll(s, Some(&mut g))?;
            Ok((nll, count, g))
        })
        .collect();
    let mut grads = model.zeros_like();
    let mut nll = 0.0;
    let mut count = 0;
    for p in parts {
        let (a, b, g) = p?;
        nll += a;
        count += b;
        grads.accumulate(&g);
    }
    if count == 0 {
        return Err(Error::Empty("scored language-model positions"));
    }
    grads.scale_all(1.0 / count as f64);
    Ok((nll / count as f64, grads))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LmTrainLog {
    pub initial_loss: f64,
    pub step_losses: Vec<f64>,
    /// Corpus loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

pub fn pretrain_lm(corpus: &[Vec<Token>], config: &LmConfig) -> Result<(LanguageModel, LmTrainLog)> {
    if corpus.is_empty() {
        return Err(Error::Empty("language-model corpus"));
    }
    if config.batch_size == 0 || config.hidden == 0 || config.layers == 0 {
        return Err(Error::Config("batch size, hidden and layers must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = LanguageModel::init(config.hidden, config.layers, &mut rng);
    let mut adam = Adam::new(config.adam);
    let mut log = LmTrainLog {
        initial_loss: lm_loss(&model, corpus)?,
        ..Default::default()
    };
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Vec<Token>> = chunk.iter().map(|&i| corpus[i].clone()).collect();
            let (loss, grads) = match lm_loss_and_grad(&model, &batch) {
                Ok(v) => v,
                Err(Error::Empty(_)) => continue,
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("language-model loss at step {}", log.step_losses.len())));
            }
            adam.update(&mut model, &grads)?;
            log.step_losses.push(loss);
        }
        let epoch_loss = lm_loss(&model, corpus)?;
        log::info!("lm epoch {}: loss {epoch_loss:.4}", epoch + 1);
        log.epoch_losses.push(epoch_loss);
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::grad_check;

    const UNIFORM: f64 = 5.991464547107982; // 2 ln 20

    fn toy_corpus(count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<Token>> {
        let motif: [Token; 6] = [0, 9, 10, 5, 2, 15];
        (0..count)
            .map(|_| {
                let n = rng.gen_range(8..16);
                let off = rng.gen_range(0..6);
                (0..n).map(|k| motif[(k + off) % 6]).collect()
            })
            .collect()
    }

    #[test]
    fn uniform_model_scores_two_log_twentieths() {
        assert!((UNIFORM - 2.0 * 20f64.ln()).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut lm = LanguageModel::init(8, 2, &mut rng);
        lm.output.w.fill(0.0);
        let toks: Vec<Token> = vec![3, 7, 1, 19];
        for i in 0..toks.len() {
            assert!((lm.position_logprob(&toks, i).unwrap() + UNIFORM).abs() < 1e-12);
        }
        assert!((lm_loss(&lm, &[toks]).unwrap() - UNIFORM).abs() < 1e-12);
    }

    #[test]
    fn default_init_is_near_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let corpus = toy_corpus(20, &mut rng);
        let lm = LanguageModel::init(128, 2, &mut rng);
        let loss = lm_loss(&lm, &corpus).unwrap();
        assert!((loss - UNIFORM).abs() < 0.5, "{loss}");
    }

    #[test]
    fn position_scores_sum_to_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lm = LanguageModel::init(6, 2, &mut rng);
        let toks: Vec<Token> = vec![4, 4, UNKNOWN, 11, 0];
        let total: f64 = [0, 1, 3, 4].iter().map(|&i| -lm.position_logprob(&toks, i).unwrap()).sum();
        let loss = lm_loss(&lm, &[toks.clone()]).unwrap();
        assert!((total - 4.0 * loss).abs() < 1e-12);
        assert!(lm.position_logprob(&toks, 2).is_err());
        assert!(lm_loss(&lm, &[vec![UNKNOWN]]).is_err());
    }

    #[test]
    fn per_direction_distributions_are_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lm = LanguageModel::init(5, 2, &mut rng);
        let pass = lm.direction(&[1, 2, 3]).unwrap();
        for k in 0..3 {
            let s: f64 = pass.logprobs.row(k).iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_uses_learned_start_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut lm = LanguageModel::init(4, 1, &mut rng);
        let before = lm.position_logprob(&[2, 6], 0).unwrap();
        lm.h0[0].data_mut()[0] += 0.5;
        assert_ne!(lm.position_logprob(&[2, 6], 0).unwrap(), before);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut lm = LanguageModel::init(3, 2, &mut rng);
            lm.visit_mut("", &mut |_, t| {
                for v in t.data_mut() {
                    *v += rng.gen_range(-0.3..0.3);
                }
            });
            let n = rng.gen_range(1..6);
            let toks: Vec<Token> = (0..n).map(|_| rng.gen_range(0..21) as Token).collect();
            let batch = vec![toks, vec![5, 7]];
            let err = grad_check(
                &lm,
                |m| lm_loss(m, &batch).unwrap(),
                |m| lm_loss_and_grad(m, &batch).unwrap().1,
                1e-5,
            );
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn hidden_states_shape_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let lm = LanguageModel::init(4, 2, &mut rng);
        let toks: Vec<Token> = vec![0, 5, 9, 20, 3];
        let a = lm.hidden_states(&toks).unwrap();
        assert_eq!(a.shape(), &[5, 16]);
        assert_eq!(a, lm.hidden_states(&toks).unwrap());
        // the first forward block of the last row equals the forward layer-0
        // state after the full sequence
        let f = lm.run_stack(&toks).unwrap();
        assert_eq!(&a.row(4)[..4], f[0].hs.row(4));
        let r = lm.run_stack(&[3, 20, 9, 5, 0]).unwrap();
        assert_eq!(&a.row(0)[12..16], r[1].hs.row(4));
    }

    #[test]
    fn loss_strictly_decreases_over_first_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let corpus = toy_corpus(50, &mut rng);
        let mut lm = LanguageModel::init(16, 2, &mut rng);
        let mut adam = Adam::new(AdamConfig::default());
        let mut prev = lm_loss(&lm, &corpus).unwrap();
        for step in 0..10 {
            let (_, g) = lm_loss_and_grad(&lm, &corpus).unwrap();
            adam.update(&mut lm, &g).unwrap();
            let cur = lm_loss(&lm, &corpus).unwrap();
            assert!(cur < prev, "step {step}: {cur} >= {prev}");
            prev = cur;
        }
    }

    #[test]
    fn pretraining_beats_uniform_and_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let corpus = toy_corpus(64, &mut rng);
        let config = LmConfig {
            hidden: 16,
            epochs: 3,
            batch_size: 8,
            adam: AdamConfig { lr: 0.01, ..AdamConfig::default() },
            seed: 3,
            ..LmConfig::default()
        };
        let (m1, log1) = pretrain_lm(&corpus, &config).unwrap();
        let (m2, log2) = pretrain_lm(&corpus, &config).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(log1, log2);
        assert!(*log1.epoch_losses.last().unwrap() < UNIFORM);
        assert!(log1.epoch_losses[0] < log1.initial_loss);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let lm = LanguageModel::init(5, 2, &mut rng);
        let bytes = lm.to_checkpoint().to_bytes();
        let back = LanguageModel::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, lm);
        assert_eq!(back.to_checkpoint().to_bytes(), bytes);
    }
}
