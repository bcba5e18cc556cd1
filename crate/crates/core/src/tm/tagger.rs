use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::crf::{crf_nll_and_grad, viterbi};
use super::grammar::Grammar;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::lstm::BiLstmTrace;
use crate::nn::params::join;
use crate::nn::{Adam, AdamConfig, BiLstmLayer, Linear, Params, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TmConfig {
    /// Units per biLSTM direction.
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TmConfig {
    fn default() -> Self {
        TmConfig {
            hidden: 64,
            epochs: 20,
            batch_size: 8,
            adam: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
            seed: 0,
        }
    }
}

/// Single-layer biLSTM emitting per-state potentials, plus learned
/// transition scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Tagger {
    pub lstm: BiLstmLayer,
    pub emit: Linear,
    pub trans: Tensor,
}

pub struct TaggerTrace {
    lstm: BiLstmTrace,
    pub potentials: Tensor,
}

impl Tagger {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, states: usize, rng: &mut R) -> Self {
        Tagger {
            lstm: BiLstmLayer::init(input, hidden, rng),
            emit: Linear::init(2 * hidden, states, rng),
            trans: Tensor::zeros(&[states, states]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.lstm.forward.input_dim()
    }

    pub fn forward(&self, features: &Tensor) -> Result<TaggerTrace> {
        if features.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "tagger expects features of width {}, got {}",
                self.input_dim(),
                features.cols()
            )));
        }
        let lstm = self.lstm.forward(features)?;
        let potentials = self.emit.forward_seq(&lstm.output)?;
        Ok(TaggerTrace { lstm, potentials })
    }

    /// Negative log-likelihood of `path`, accumulating gradients into `grads`.
    pub fn nll_and_grad(&self, g: &Grammar, features: &Tensor, path: &[usize], grads: &mut Tagger) -> Result<f64> {
        let tr = self.forward(features)?;
        let (nll, dpot, dtrans) = crf_nll_and_grad(g, &tr.potentials, &self.trans, path)?;
        grads.trans.add_assign(&dtrans);
        let dout = self.emit.backward_seq(&tr.lstm.output, &dpot, &mut grads.emit);
        self.lstm.backward(&tr.lstm, &dout, &mut grads.lstm);
        Ok(nll)
    }

    pub fn decode(&self, g: &Grammar, features: &Tensor) -> Result<Vec<usize>> {
        viterbi(g, &self.forward(features)?.potentials, &self.trans)
    }

    pub fn to_checkpoint(&self, g: &Grammar, feature_source: &str) -> Checkpoint {
        let mut ck = Checkpoint::new(json!({
            "kind": "tm-tagger",
            "input_dim": self.input_dim(),
            "hidden": self.lstm.hidden_dim(),
            "grammar": g.to_toml(),
            "features": feature_source,
        }));
        ck.push_params("tagger", self);
        ck
    }

    /// The tagger, its grammar and the feature source it was trained on.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Tagger, Grammar, String)> {
        let m = &ck.metadata;
        if m["kind"] != "tm-tagger" {
            return Err(Error::Checkpoint("not a tm-tagger checkpoint".into()));
        }
        let bad = |f: &str| Error::Checkpoint(format!("metadata field {f} missing or invalid"));
        let input = m["input_dim"].as_u64().ok_or_else(|| bad("input_dim"))? as usize;
        let hidden = m["hidden"].as_u64().ok_or_else(|| bad("hidden"))? as usize;
        let grammar = Grammar::from_toml(m["grammar"].as_str().ok_or_else(|| bad("grammar"))?)?;
        let features = m["features"].as_str().ok_or_else(|| bad("features"))?.to_string();
        let mut t = Tagger::init(input, hidden, grammar.num_states(), &mut ChaCha8Rng::seed_from_u64(0));
        ck.load_params("tagger", &mut t)?;
        Ok((t, grammar, features))
    }
}

impl Params for Tagger {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.lstm.visit(&join(prefix, "lstm"), f);
        self.emit.visit(&join(prefix, "emit"), f);
        f(join(prefix, "trans"), &self.trans);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.lstm.visit_mut(&join(prefix, "lstm"), f);
        self.emit.visit_mut(&join(prefix, "emit"), f);
        f(join(prefix, "trans"), &mut self.trans);
    }
}

/// Mean NLL over a batch and its gradient; per-sequence work in parallel,
/// summed in input order.
pub fn batch_nll_and_grad(
    tagger: &Tagger,
    g: &Grammar,
    features: &[&Tensor],
    paths: &[&[usize]],
) -> Result<(f64, Tagger)> {
    let parts: Vec<(f64, Tagger)> = features
        .par_iter()
        .zip(paths.par_iter())
        .map(|(x, p)| {
            let mut gr = tagger.zeros_like();
            let nll = tagger.nll_and_grad(g, x, p, &mut gr)?;
            Ok((nll, gr))
        })
        .collect::<Result<_>>()?;
    let mut grads = tagger.zeros_like();
    let mut total = 0.0;
    for (l, gr) in &parts {
        total += l;
        grads.accumulate(gr);
    }
    let scale = 1.0 / parts.len().max(1) as f64;
    grads.scale_all(scale);
    Ok((total * scale, grads))
}

/// Trains a tagger from scratch; returns it with the mean NLL per epoch.
pub fn train_tagger(
    g: &Grammar,
    features: &[Tensor],
    paths: &[Vec<usize>],
    config: &TmConfig,
) -> Result<(Tagger, Vec<f64>)> {
    if features.is_empty() {
        return Err(Error::Empty("tagger training set"));
    }
    if features.len() != paths.len() {
        return Err(Error::shape("features and label paths differ in count"));
    }
    if config.hidden == 0 || config.batch_size == 0 {
        return Err(Error::Config("tagger hidden width and batch size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tagger = Tagger::init(features[0].cols(), config.hidden, g.num_states(), &mut rng);
    let mut adam = Adam::new(config.adam);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let xs: Vec<&Tensor> = chunk.iter().map(|&i| &features[i]).collect();
            let ps: Vec<&[usize]> = chunk.iter().map(|&i| paths[i].as_slice()).collect();
            let (loss, grads) = batch_nll_and_grad(&tagger, g, &xs, &ps)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("tagger loss {loss}")));
            }
            adam.update(&mut tagger, &grads)?;
            total += loss * chunk.len() as f64;
        }
        epoch_losses.push(total / features.len() as f64);
    }
    Ok((tagger, epoch_losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{one_hot, RegionKind};
    use crate::nn::gradcheck::grad_check;
    use crate::tm::crf::constrained_path;

    fn labels(s: &str) -> Vec<RegionKind> {
        s.chars().map(|c| RegionKind::from_letter(c).unwrap()).collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let g = Grammar::default_tm();
        let kinds = labels("OOMMMMMIII");
        let path = constrained_path(&g, &kinds).unwrap();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::uniform(&[kinds.len(), 4], 1.0, &mut rng);
            let mut t = Tagger::init(4, 3, g.num_states(), &mut rng);
            t.visit_mut("", &mut |_, v| v.data_mut().iter_mut().for_each(|a| *a += rng.gen_range(-0.2..0.2)));
            let err = grad_check(
                &t,
                |t| t.nll_and_grad(&g, &x, &path, &mut t.zeros_like()).unwrap(),
                |t| {
                    let mut gr = t.zeros_like();
                    t.nll_and_grad(&g, &x, &path, &mut gr).unwrap();
                    gr
                },
                1e-6,
            );
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn learns_a_hydrophobic_helix_rule() {
        use crate::data::encode_sequence;
        let g = Grammar::default_tm();
        let mut feats = Vec::new();
        let mut paths = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..16 {
            let (a, h, b) = (rng.gen_range(2..5), rng.gen_range(6..9), rng.gen_range(2..5));
            let seq = format!("{}{}{}", "K".repeat(a), "L".repeat(h), "S".repeat(b));
            let kinds = labels(&format!("{}{}{}", "I".repeat(a), "M".repeat(h), "O".repeat(b)));
            feats.push(one_hot(&encode_sequence(&seq)));
            paths.push(constrained_path(&g, &kinds).unwrap());
        }
        let config = TmConfig {
            hidden: 8,
            epochs: 30,
            ..TmConfig::default()
        };
        let (t, losses) = train_tagger(&g, &feats, &paths, &config).unwrap();
        assert!(losses.last().unwrap() < &(losses[0] * 0.2), "{losses:?}");
        let test = one_hot(&encode_sequence("KKKLLLLLLLSSS"));
        let decoded = t.decode(&g, &test).unwrap();
        let kinds: String = decoded.iter().map(|&s| g.region(s).letter()).collect();
        assert_eq!(kinds, "IIIMMMMMMMOOO");
    }

    #[test]
    fn checkpoint_round_trip() {
        let g = Grammar::default_tm();
        let t = Tagger::init(21, 5, g.num_states(), &mut ChaCha8Rng::seed_from_u64(1));
        let ck = Checkpoint::from_bytes(&t.to_checkpoint(&g, "onehot").to_bytes()).unwrap();
        let (back, g2, src) = Tagger::from_checkpoint(&ck).unwrap();
        assert_eq!((back, g2, src.as_str()), (t, g, "onehot"));
    }
}
