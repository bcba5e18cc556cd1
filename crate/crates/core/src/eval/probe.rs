//! Per-position secondary-structure probe: an MLP with two ReLU hidden
//! layers trained by softmax cross-entropy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Token, NUM_TOKENS, UNKNOWN};
use crate::error::{Error, Result};
use crate::nn::activation::log_softmax_in_place;
use crate::nn::params::join;
use crate::nn::{Adam, AdamConfig, Linear, Params, Tensor};

pub const NUM_SS_CLASSES: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden: 256,
            epochs: 10,
            batch_size: 256,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub accuracy: f64,
    /// `exp` of the mean test cross-entropy.
    pub perplexity: f64,
    pub train_accuracy: f64,
    /// Classes with no training example.
    pub missing_classes: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
    pub out: Linear,
}

impl Params for Mlp {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.l1.visit(&join(prefix, "l1"), f);
        self.l2.visit(&join(prefix, "l2"), f);
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.l1.visit_mut(&join(prefix, "l1"), f);
        self.l2.visit_mut(&join(prefix, "l2"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

fn relu(t: &mut Tensor) {
    t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

fn mask(d: &mut Tensor, act: &Tensor) {
    for (g, &a) in d.data_mut().iter_mut().zip(act.data()) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

impl Mlp {
    pub fn init<R: rand::Rng + ?Sized>(input: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        Mlp {
            l1: Linear::init(input, hidden, rng),
            l2: Linear::init(hidden, hidden, rng),
            out: Linear::init(hidden, classes, rng),
        }
    }

    /// Row-wise log-probabilities.
    pub fn log_probs(&self, x: &Tensor) -> Result<Tensor> {
        let mut h1 = self.l1.forward_seq(x)?;
        relu(&mut h1);
        let mut h2 = self.l2.forward_seq(&h1)?;
        relu(&mut h2);
        let mut lp = self.out.forward_seq(&h2)?;
        for i in 0..lp.rows() {
            log_softmax_in_place(lp.row_mut(i));
        }
        Ok(lp)
    }

    /// Mean cross-entropy over the rows and its gradient.
    pub fn loss_and_grad(&self, x: &Tensor, y: &[u8]) -> Result<(f64, Mlp)> {
        let mut h1 = self.l1.forward_seq(x)?;
        relu(&mut h1);
        let mut h2 = self.l2.forward_seq(&h1)?;
        relu(&mut h2);
        let mut lp = self.out.forward_seq(&h2)?;
        let n = x.rows();
        let mut loss = 0.0;
        let mut dlogits = Tensor::zeros(&[n, self.out.output_dim()]);
        for i in 0..n {
            let row = lp.row_mut(i);
            log_softmax_in_place(row);
            loss -= row[y[i] as usize];
            let d = dlogits.row_mut(i);
            for (c, dv) in d.iter_mut().enumerate() {
                *dv = (row[c].exp() - if c == y[i] as usize { 1.0 } else { 0.0 }) / n as f64;
            }
        }
        let mut g = self.zeros_like();
        let mut d2 = self.out.backward_seq(&h2, &dlogits, &mut g.out);
        mask(&mut d2, &h2);
        let mut d1 = self.l2.backward_seq(&h1, &d2, &mut g.l2);
        mask(&mut d1, &h1);
        self.l1.backward_seq(x, &d1, &mut g.l1);
        Ok((loss / n as f64, g))
    }
}

fn rows_of(x: &Tensor, idx: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(&[idx.len(), x.cols()]);
    for (k, &i) in idx.iter().enumerate() {
        out.row_mut(k).copy_from_slice(x.row(i));
    }
    out
}

fn accuracy_and_ce(model: &Mlp, x: &Tensor, y: &[u8]) -> Result<(f64, f64)> {
    let lp = model.log_probs(x)?;
    let mut hits = 0;
    let mut ce = 0.0;
    for (i, &label) in y.iter().enumerate() {
        let row = lp.row(i);
        let mut best = 0;
        for c in 1..row.len() {
            if row[c] > row[best] {
                best = c;
            }
        }
        hits += usize::from(best == label as usize);
        ce -= row[label as usize];
    }
    let n = y.len() as f64;
    Ok((hits as f64 / n, ce / n))
}

/// Trains on `(train_x, train_y)` and reports accuracy and perplexity on
/// the test rows.
pub fn ss_probe(train_x: &Tensor, train_y: &[u8], test_x: &Tensor, test_y: &[u8], config: &ProbeConfig) -> Result<ProbeResult> {
    if train_x.rows() != train_y.len() || test_x.rows() != test_y.len() {
        return Err(Error::shape("probe features and labels differ in length"));
    }
    if train_y.is_empty() || test_y.is_empty() {
        return Err(Error::Empty("probe split"));
    }
    if train_x.cols() != test_x.cols() {
        return Err(Error::shape("train and test feature widths differ"));
    }
    if train_y.iter().chain(test_y).any(|&c| c as usize >= NUM_SS_CLASSES) {
        return Err(Error::data("secondary-structure class outside 0..8"));
    }
    if config.batch_size == 0 || config.hidden == 0 {
        return Err(Error::Config("probe batch size and hidden width must be >= 1".into()));
    }
    let missing_classes: Vec<u8> = (0..NUM_SS_CLASSES as u8).filter(|c| !train_y.contains(c)).collect();
    if !missing_classes.is_empty() {
        log::warn!("classes {missing_classes:?} never occur in the probe training split");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Mlp::init(train_x.cols(), config.hidden, NUM_SS_CLASSES, &mut rng);
    let mut adam = Adam::new(config.adam);
    let mut order: Vec<usize> = (0..train_y.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let x = rows_of(train_x, chunk);
            let y: Vec<u8> = chunk.iter().map(|&i| train_y[i]).collect();
            let (_, g) = model.loss_and_grad(&x, &y)?;
            adam.update(&mut model, &g)?;
        }
    }
    let (train_accuracy, _) = accuracy_and_ce(&model, train_x, train_y)?;
    let (accuracy, ce) = accuracy_and_ce(&model, test_x, test_y)?;
    Ok(ProbeResult {
        accuracy,
        perplexity: ce.exp(),
        train_accuracy,
        missing_classes,
    })
}

/// One-hot encoding of the width-`k` window centred on each position,
/// padded with the unknown token past either end.
pub fn kmer_features(tokens: &[Token], k: usize) -> Result<Tensor> {
    if k.is_multiple_of(2) {
        return Err(Error::Config(format!("k-mer width must be odd, got {k}")));
    }
    let half = (k / 2) as isize;
    let n = tokens.len();
    let mut out = Tensor::zeros(&[n, k * NUM_TOKENS]);
    for i in 0..n {
        let row = out.row_mut(i);
        for (slot, off) in (-half..=half).enumerate() {
            let p = i as isize + off;
            let t = if p < 0 || p >= n as isize { UNKNOWN } else { tokens[p as usize] };
            row[slot * NUM_TOKENS + t as usize] = 1.0;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::grad_check;
    use rand::Rng;

    #[test]
    fn kmer_window_is_centred_and_padded() {
        let f = kmer_features(&[3, 7], 3).unwrap();
        assert_eq!(f.shape(), &[2, 63]);
        let hot = |r: usize| -> Vec<usize> { (0..63).filter(|&c| f.get2(r, c) == 1.0).collect() };
        assert_eq!(hot(0), vec![UNKNOWN as usize, 21 + 3, 42 + 7]);
        assert_eq!(hot(1), vec![3, 21 + 7, 42 + UNKNOWN as usize]);
        assert!(kmer_features(&[1], 2).is_err());
    }

    #[test]
    fn untrained_uniform_output_has_perplexity_eight() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut mlp = Mlp::init(4, 5, NUM_SS_CLASSES, &mut rng);
        mlp.out.w.fill(0.0);
        let x = Tensor::uniform(&[10, 4], 1.0, &mut rng);
        let y: Vec<u8> = (0..10).map(|i| (i % 8) as u8).collect();
        let (_, ce) = accuracy_and_ce(&mlp, &x, &y).unwrap();
        assert!((ce.exp() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn memorizes_a_deterministic_mapping() {
        let mut x = Tensor::zeros(&[64, 8]);
        let mut y = Vec::new();
        for i in 0..64 {
            x.set2(i, i % 8, 1.0);
            y.push((i % 8) as u8);
        }
        let config = ProbeConfig {
            hidden: 32,
            epochs: 200,
            batch_size: 16,
            adam: AdamConfig { lr: 0.01, ..AdamConfig::default() },
            seed: 1,
        };
        let r = ss_probe(&x, &y, &x, &y, &config).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!(r.perplexity < 1.05, "{}", r.perplexity);
        assert!(r.missing_classes.is_empty());
    }

    #[test]
    fn absent_class_still_runs() {
        let x = Tensor::filled(&[4, 2], 1.0);
        let r = ss_probe(&x, &[0, 1, 0, 1], &x, &[0, 1, 2, 3], &ProbeConfig { hidden: 4, ..ProbeConfig::default() }).unwrap();
        assert_eq!(r.missing_classes, vec![2, 3, 4, 5, 6, 7]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut mlp = Mlp::init(3, 4, NUM_SS_CLASSES, &mut rng);
            mlp.visit_mut("", &mut |_, t| t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.2..0.2)));
            let x = Tensor::uniform(&[5, 3], 1.0, &mut rng);
            let y: Vec<u8> = (0..5).map(|_| rng.gen_range(0..8)).collect();
            let err = grad_check(
                &mlp,
                |m| m.loss_and_grad(&x, &y).unwrap().0,
                |m| m.loss_and_grad(&x, &y).unwrap().1,
                1e-5,
            );
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }
}
