//! Per-position sequence encoder: input fusion, architecture body and a
//! final linear projection to `D` dimensions.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Token, NUM_TOKENS};
use crate::error::{Error, Result};
use crate::nn::lstm::{bilstm_stack_backward, bilstm_stack_forward, BiLstmTrace};
use crate::nn::params::join;
use crate::nn::{BiLstmLayer, Linear, Params, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "linear")]
    Linear,
    #[serde(rename = "fc")]
    FullyConnected,
    #[serde(rename = "bilstm1")]
    BiLstm1,
    #[serde(rename = "bilstm3")]
    BiLstm3,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Linear,
        Architecture::FullyConnected,
        Architecture::BiLstm1,
        Architecture::BiLstm3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Linear => "linear",
            Architecture::FullyConnected => "fc",
            Architecture::BiLstm1 => "bilstm1",
            Architecture::BiLstm3 => "bilstm3",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(Architecture::Linear),
            "fc" | "fully-connected" => Ok(Architecture::FullyConnected),
            "bilstm1" | "bilstm-1" => Ok(Architecture::BiLstm1),
            "bilstm3" | "bilstm-3" => Ok(Architecture::BiLstm3),
            other => Err(Error::Config(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub arch: Architecture,
    /// Units per biLSTM direction, or the hidden width of `fc`.
    pub hidden: usize,
    /// Output embedding dimension `D`.
    pub dim: usize,
    /// Width of the fused input representation.
    pub fusion: usize,
    pub use_lm: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            arch: Architecture::BiLstm3,
            hidden: 64,
            dim: 32,
            fusion: 64,
            use_lm: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.dim == 0 || self.fusion == 0 {
            return Err(Error::Config("encoder hidden, dim and fusion widths must be >= 1".into()));
        }
        Ok(())
    }
}

/// `h = ReLU(W_lm h_lm + W_x x + b)` with `x` one-hot over 21 tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Fusion {
    /// `fusion × lm_dim`; absent when the LM is disabled (`h_lm = 0`).
    pub w_lm: Option<Tensor>,
    /// `fusion × 21`
    pub w_x: Tensor,
    pub b: Tensor,
}

impl Fusion {
    pub fn init<R: Rng + ?Sized>(width: usize, lm_dim: Option<usize>, rng: &mut R) -> Self {
        let fan_in = NUM_TOKENS + lm_dim.unwrap_or(0);
        let bound = (6.0 / (fan_in + width) as f64).sqrt();
        Fusion {
            w_lm: lm_dim.map(|d| Tensor::uniform(&[width, d], bound, rng)),
            w_x: Tensor::uniform(&[width, NUM_TOKENS], bound, rng),
            b: Tensor::zeros(&[width]),
        }
    }

    pub fn width(&self) -> usize {
        self.b.len()
    }

    pub fn lm_dim(&self) -> Option<usize> {
        self.w_lm.as_ref().map(|w| w.cols())
    }

    /// Pre-activations, one row per position.
    fn preactivations(&self, tokens: &[Token], lm: Option<&Tensor>) -> Result<Tensor> {
        let width = self.width();
        let n = tokens.len();
        let mut pre = Tensor::zeros(&[n, width]);
        match (&self.w_lm, lm) {
            (Some(w), Some(h)) => {
                if h.rows() != n || h.cols() != w.cols() {
                    return Err(Error::shape(format!(
                        "LM states {:?} do not match {n} tokens × {}",
                        h.shape(),
                        w.cols()
                    )));
                }
                for i in 0..n {
                    let hi = h.row(i);
                    let out = pre.row_mut(i);
                    for (k, o) in out.iter_mut().enumerate() {
                        *o = crate::nn::dot(w.row(k), hi);
                    }
                }
            }
            (Some(_), None) => return Err(Error::Config("encoder expects LM states".into())),
            (None, _) => {}
        }
        for (i, &t) in tokens.iter().enumerate() {
            let out = pre.row_mut(i);
            for (k, o) in out.iter_mut().enumerate() {
                *o += self.w_x.get2(k, t as usize) + self.b.data()[k];
            }
        }
        Ok(pre)
    }

    /// Backward from the gradient on the pre-activations.
    fn backward(&self, tokens: &[Token], lm: Option<&Tensor>, dpre: &Tensor, grads: &mut Fusion) {
        for (i, &t) in tokens.iter().enumerate() {
            let d = dpre.row(i);
            for (k, &dk) in d.iter().enumerate() {
                if dk == 0.0 {
                    continue;
                }
                grads.b.data_mut()[k] += dk;
                let c = grads.w_x.get2(k, t as usize);
                grads.w_x.set2(k, t as usize, c + dk);
                if let (Some(gw), Some(h)) = (grads.w_lm.as_mut(), lm) {
                    crate::nn::axpy(dk, h.row(i), gw.row_mut(k));
                }
            }
        }
    }
}

impl Params for Fusion {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        if let Some(w) = &self.w_lm {
            f(join(prefix, "w_lm"), w);
        }
        f(join(prefix, "w_x"), &self.w_x);
        f(join(prefix, "b"), &self.b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        if let Some(w) = &mut self.w_lm {
            f(join(prefix, "w_lm"), w);
        }
        f(join(prefix, "w_x"), &mut self.w_x);
        f(join(prefix, "b"), &mut self.b);
    }
}

/// `fuse_inputs` for a single position.
pub fn fuse_inputs(token: Token, h_lm: Option<&[f64]>, fusion: &Fusion) -> Result<Vec<f64>> {
    let lm = match h_lm {
        Some(h) => Some(Tensor::from_vec(&[1, h.len()], h.to_vec())?),
        None if fusion.w_lm.is_some() => Some(Tensor::zeros(&[1, fusion.lm_dim().unwrap_or(0)])),
        None => None,
    };
    let pre = fusion.preactivations(&[token], lm.as_ref())?;
    Ok(pre.data().iter().map(|&v| v.max(0.0)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub enum Body {
    Linear,
    FullyConnected(Linear),
    BiLstm(Vec<BiLstmLayer>),
}

impl Params for Body {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        match self {
            Body::Linear => {}
            Body::FullyConnected(l) => l.visit(&join(prefix, "fc"), f),
            Body::BiLstm(layers) => layers.visit(&join(prefix, "bilstm"), f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        match self {
            Body::Linear => {}
            Body::FullyConnected(l) => l.visit_mut(&join(prefix, "fc"), f),
            Body::BiLstm(layers) => layers.visit_mut(&join(prefix, "bilstm"), f),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub fusion: Fusion,
    pub body: Body,
    pub projection: Linear,
}

/// Intermediate values kept for the backward pass.
#[derive(Clone, Debug)]
pub struct EncoderTrace {
    fused_pre: Tensor,
    fused: Tensor,
    fc_pre: Option<Tensor>,
    lstm: Vec<BiLstmTrace>,
    body_out: Tensor,
    pub z: Tensor,
}

fn relu_rows(pre: &Tensor) -> Tensor {
    let mut out = pre.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

fn relu_backward(pre: &Tensor, d: &mut Tensor) {
    for (g, &p) in d.data_mut().iter_mut().zip(pre.data()) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
}

impl Encoder {
    /// `lm_dim` is the width of the LM states; ignored unless `config.use_lm`.
    pub fn init<R: Rng + ?Sized>(config: &EncoderConfig, lm_dim: Option<usize>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let lm_dim = if config.use_lm {
            Some(lm_dim.ok_or_else(|| Error::Config("LM fusion enabled but no LM given".into()))?)
        } else {
            None
        };
        let fusion = Fusion::init(config.fusion, lm_dim, rng);
        let (body, body_dim) = match config.arch {
            Architecture::Linear => (Body::Linear, config.fusion),
            Architecture::FullyConnected => (
                Body::FullyConnected(Linear::init(config.fusion, config.hidden, rng)),
                config.hidden,
            ),
            Architecture::BiLstm1 | Architecture::BiLstm3 => {
                let depth = if config.arch == Architecture::BiLstm1 { 1 } else { 3 };
                let layers = (0..depth)
                    .map(|l| {
                        let input = if l == 0 { config.fusion } else { 2 * config.hidden };
                        BiLstmLayer::init(input, config.hidden, rng)
                    })
                    .collect();
                (Body::BiLstm(layers), 2 * config.hidden)
            }
        };
        Ok(Encoder {
            config: config.clone(),
            fusion,
            body,
            projection: Linear::init(body_dim, config.dim, rng),
        })
    }

    pub fn dim(&self) -> usize {
        self.projection.output_dim()
    }

    pub fn forward(&self, tokens: &[Token], lm: Option<&Tensor>) -> Result<EncoderTrace> {
        if tokens.is_empty() {
            return Err(Error::Empty("sequence"));
        }
        let fused_pre = self.fusion.preactivations(tokens, lm)?;
        let fused = relu_rows(&fused_pre);
        let mut fc_pre = None;
        let mut lstm = Vec::new();
        let body_out = match &self.body {
            Body::Linear => fused.clone(),
            Body::FullyConnected(l) => {
                let pre = l.forward_seq(&fused)?;
                let out = relu_rows(&pre);
                fc_pre = Some(pre);
                out
            }
            Body::BiLstm(layers) => {
                lstm = bilstm_stack_forward(layers, &fused)?;
                lstm.last().expect("at least one layer").output.clone()
            }
        };
        let z = self.projection.forward_seq(&body_out)?;
        Ok(EncoderTrace {
            fused_pre,
            fused,
            fc_pre,
            lstm,
            body_out,
            z,
        })
    }

    pub fn encode(&self, tokens: &[Token], lm: Option<&Tensor>) -> Result<Tensor> {
        Ok(self.forward(tokens, lm)?.z)
    }

    /// Accumulates parameter gradients for upstream gradient `dz`.
    pub fn backward(&self, tokens: &[Token], lm: Option<&Tensor>, trace: &EncoderTrace, dz: &Tensor, grads: &mut Encoder) {
        let mut d_body = self.projection.backward_seq(&trace.body_out, dz, &mut grads.projection);
        let mut d_fused = match (&self.body, &mut grads.body) {
            (Body::Linear, _) => d_body,
            (Body::FullyConnected(l), Body::FullyConnected(gl)) => {
                relu_backward(trace.fc_pre.as_ref().expect("fc trace"), &mut d_body);
                l.backward_seq(&trace.fused, &d_body, gl)
            }
            (Body::BiLstm(layers), Body::BiLstm(gl)) => bilstm_stack_backward(layers, &trace.lstm, &d_body, gl),
            _ => unreachable!("gradient buffer built from a different architecture"),
        };
        relu_backward(&trace.fused_pre, &mut d_fused);
        self.fusion.backward(tokens, lm, &d_fused, &mut grads.fusion);
    }
}

impl Params for Encoder {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.fusion.visit(&join(prefix, "fusion"), f);
        self.body.visit(&join(prefix, "body"), f);
        self.projection.visit(&join(prefix, "projection"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.fusion.visit_mut(&join(prefix, "fusion"), f);
        self.body.visit_mut(&join(prefix, "body"), f);
        self.projection.visit_mut(&join(prefix, "projection"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(arch: Architecture, use_lm: bool) -> EncoderConfig {
        EncoderConfig {
            arch,
            hidden: 3,
            dim: 2,
            fusion: 4,
            use_lm,
        }
    }

    #[test]
    fn identity_fusion_passes_one_hot_through() {
        let mut fusion = Fusion::init(NUM_TOKENS, None, &mut ChaCha8Rng::seed_from_u64(0));
        fusion.w_x.fill(0.0);
        for k in 0..NUM_TOKENS {
            fusion.w_x.set2(k, k, 1.0);
        }
        let h = fuse_inputs(7, None, &fusion).unwrap();
        let mut expect = vec![0.0; NUM_TOKENS];
        expect[7] = 1.0;
        assert_eq!(h, expect);
        fusion.b.fill(-5.0);
        assert!(fuse_inputs(7, None, &fusion).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn missing_lm_states_count_as_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut fusion = Fusion::init(5, Some(3), &mut rng);
        fusion.b = Tensor::uniform(&[5], 1.0, &mut rng);
        let a = fuse_inputs(2, None, &fusion).unwrap();
        let b = fuse_inputs(2, Some(&[0.0, 0.0, 0.0]), &fusion).unwrap();
        assert_eq!(a, b);
        assert!(fuse_inputs(2, Some(&[0.0, 0.0]), &fusion).is_err());
    }

    #[test]
    fn shapes_for_every_architecture() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for arch in Architecture::ALL {
            let enc = Encoder::init(&small(arch, false), None, &mut rng).unwrap();
            for n in [1, 2, 7] {
                let toks: Vec<Token> = (0..n).map(|i| (i % 21) as Token).collect();
                assert_eq!(enc.encode(&toks, None).unwrap().shape(), &[n, 2]);
            }
            assert!(enc.encode(&[], None).is_err());
        }
    }

    #[test]
    fn local_architectures_ignore_context() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for arch in [Architecture::Linear, Architecture::FullyConnected] {
            let enc = Encoder::init(&small(arch, false), None, &mut rng).unwrap();
            let a = enc.encode(&[1, 2, 3, 4], None).unwrap();
            let b = enc.encode(&[9, 2, 17, 0, 5], None).unwrap();
            assert_eq!(a.row(1), b.row(1));
            let perm = enc.encode(&[4, 2, 1, 3], None).unwrap();
            assert_eq!(a.row(1), perm.row(1));
        }
    }

    #[test]
    fn recurrent_architectures_see_context() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for arch in [Architecture::BiLstm1, Architecture::BiLstm3] {
                let enc = Encoder::init(&small(arch, false), None, &mut rng).unwrap();
                let a = enc.encode(&[1, 2, 3, 4], None).unwrap();
                let b = enc.encode(&[1, 2, 3, 11], None).unwrap();
                assert_ne!(a.row(0), b.row(0));
            }
        }
    }

    #[test]
    fn end_to_end_gradients() {
        for arch in Architecture::ALL {
            for seed in 0..20u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut enc = Encoder::init(&small(arch, true), Some(3), &mut rng).unwrap();
                // zero-initialized biases can put ReLU inputs exactly on the kink
                enc.visit_mut("", &mut |_, t| {
                    for v in t.data_mut() {
                        *v += rng.gen_range(-0.2..0.2);
                    }
                });
                let n = rng.gen_range(1..5);
                let toks: Vec<Token> = (0..n).map(|_| rng.gen_range(0..21) as Token).collect();
                let lm = Tensor::uniform(&[n, 3], 1.0, &mut rng);
                let readout = Tensor::uniform(&[n, 2], 1.0, &mut rng);
                let f = |e: &Encoder| -> f64 {
                    let z = e.encode(&toks, Some(&lm)).unwrap();
                    z.data().iter().zip(readout.data()).map(|(a, b)| a * b).sum()
                };
                let err = grad_check(
                    &enc,
                    f,
                    |e| {
                        let tr = e.forward(&toks, Some(&lm)).unwrap();
                        let mut g = e.zeros_like();
                        e.backward(&toks, Some(&lm), &tr, &readout, &mut g);
                        g
                    },
                    1e-5,
                );
                assert!(err <= 1e-4, "{arch} seed {seed}: {err}");
            }
        }
    }
}
