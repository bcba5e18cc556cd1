//! Registry of every differentiable operation, each checked against
//! central finite differences over a range of seeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::contact::{contact_loss_from_logits, ContactHead};
use crate::data::{ContactMap, RegionKind, Token, NUM_TOKENS};
use crate::encoder::{Architecture, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::lm::{lm_loss, lm_loss_and_grad, LanguageModel};
use crate::nn::gradcheck::{grad_check_report, GradCheckReport};
use crate::nn::lstm::{bilstm_stack_backward, bilstm_stack_forward};
use crate::nn::{dot, BiLstmLayer, LstmCell, Params, Tensor};
use crate::similarity::{similarity_loss, OrdinalHead, Scorer};
use crate::tm::crf::{constrained_path, crf_nll_and_grad};
use crate::tm::{Grammar, Tagger};

/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;

/// Seeds checked per operation by default.
pub const DEFAULT_SEEDS: u64 = 20;

type Check = fn(&mut ChaCha8Rng) -> GradCheckReport;

const REGISTRY: &[(&str, Check)] = &[
    ("fusion", fusion),
    ("lstm-cell", lstm_cell),
    ("bilstm-stack", bilstm_stack),
    ("encoder-fc", |r| encoder(Architecture::FullyConnected, r)),
    ("encoder-bilstm1", |r| encoder(Architecture::BiLstm1, r)),
    ("encoder-bilstm3", |r| encoder(Architecture::BiLstm3, r)),
    ("language-model", language_model),
    ("ssa-score", |r| scorer(Scorer::Ssa, r)),
    ("ua-score", |r| scorer(Scorer::Ua, r)),
    ("me-score", |r| scorer(Scorer::Me, r)),
    ("ordinal-loss", ordinal_loss),
    ("contact-head", contact_head),
    ("crf-log-likelihood", crf),
    ("tm-tagger", tagger),
];

#[derive(Clone, Debug, Serialize)]
pub struct OpOutcome {
    pub name: &'static str,
    pub seeds: u64,
    /// Worst relative error after discounting the rounding noise of the
    /// difference quotient; this is what the tolerance applies to.
    pub max_error: f64,
    /// Worst plain relative error, noise included.
    pub max_raw_error: f64,
    pub worst_seed: u64,
}

impl OpOutcome {
    pub fn passed(&self) -> bool {
        self.max_error <= TOLERANCE
    }
}

pub fn operation_names() -> Vec<&'static str> {
    REGISTRY.iter().map(|(n, _)| *n).collect()
}

/// Checks one operation on seeds `base_seed .. base_seed + seeds`.
pub fn check_operation(name: &str, base_seed: u64, seeds: u64) -> Result<OpOutcome> {
    let &(name, check) = REGISTRY
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::Config(format!("unknown operation {name:?}; known: {}", operation_names().join(", "))))?;
    let mut out = OpOutcome {
        name,
        seeds,
        max_error: 0.0,
        max_raw_error: 0.0,
        worst_seed: base_seed,
    };
    for s in base_seed..base_seed + seeds {
        let report = check(&mut ChaCha8Rng::seed_from_u64(s));
        let finite = |e: f64| if e.is_nan() { f64::INFINITY } else { e };
        out.max_raw_error = out.max_raw_error.max(finite(report.max_error));
        let err = finite(report.max_net_error);
        if err > out.max_error {
            out.max_error = err;
            out.worst_seed = s;
        }
    }
    Ok(out)
}

pub fn check_all(base_seed: u64, seeds: u64) -> Vec<OpOutcome> {
    REGISTRY
        .iter()
        .map(|(n, _)| check_operation(n, base_seed, seeds).expect("registered name"))
        .collect()
}

/// Moves parameters off exact zeros so no ReLU input sits on its kink.
fn jitter<P: Params>(p: &mut P, rng: &mut ChaCha8Rng) {
    p.visit_mut("", &mut |_, t| {
        t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.2..0.2));
    });
}

fn tokens(n: usize, rng: &mut ChaCha8Rng) -> Vec<Token> {
    (0..n).map(|_| rng.gen_range(0..NUM_TOKENS) as Token).collect()
}

fn encoder_config(arch: Architecture) -> EncoderConfig {
    EncoderConfig {
        arch,
        hidden: 3,
        dim: 2,
        fusion: 4,
        use_lm: true,
    }
}

fn encoder_check(enc: &Encoder, rng: &mut ChaCha8Rng) -> GradCheckReport {
    let n = rng.gen_range(1..5);
    let toks = tokens(n, rng);
    let lm = Tensor::uniform(&[n, 3], 1.0, rng);
    let readout = Tensor::uniform(&[n, enc.dim()], 1.0, rng);
    grad_check_report(
        enc,
        |e| dot(e.encode(&toks, Some(&lm)).unwrap().data(), readout.data()),
        |e| {
            let tr = e.forward(&toks, Some(&lm)).unwrap();
            let mut g = e.zeros_like();
            e.backward(&toks, Some(&lm), &tr, &readout, &mut g);
            g
        },
        1e-5,
    )
}

/// LM-state fusion followed by the linear projection.
fn fusion(rng: &mut ChaCha8Rng) -> GradCheckReport {
    encoder(Architecture::Linear, rng)
}

fn encoder(arch: Architecture, rng: &mut ChaCha8Rng) -> GradCheckReport {
    let mut enc = Encoder::init(&encoder_config(arch), Some(3), rng).expect("valid config");
    jitter(&mut enc, rng);
    encoder_check(&enc, rng)
}

fn lstm_cell(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let (inp, hd) = (3, 4);
    let cell = LstmCell::init(inp, hd, rng);
    let x = Tensor::uniform(&[inp], 1.0, rng);
    let h = Tensor::uniform(&[hd], 1.0, rng);
    let c = Tensor::uniform(&[hd], 1.0, rng);
    let ph = Tensor::uniform(&[hd], 1.0, rng);
    let pc = Tensor::uniform(&[hd], 1.0, rng);
    grad_check_report(
        &(cell, (x, h), c),
        |(cell, (x, h), c)| {
            let tr = cell.step(x.data(), h.data(), c.data());
            dot(&tr.h, ph.data()) + dot(&tr.c, pc.data())
        },
        |(cell, (x, h), c)| {
            let tr = cell.step(x.data(), h.data(), c.data());
            let mut g = cell.zeros_like();
            let (dx, dh, dc) = cell.step_backward(&tr, c.data(), ph.data(), pc.data(), &mut g);
            let t = |v: Vec<f64>| Tensor::from_vec(&[v.len()], v).unwrap();
            (g, (t(dx), t(dh)), t(dc))
        },
        1e-5,
    )
}

fn bilstm_stack(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let layers = vec![BiLstmLayer::init(3, 2, rng), BiLstmLayer::init(4, 2, rng)];
    let n = rng.gen_range(1..6);
    let xs = Tensor::uniform(&[n, 3], 1.0, rng);
    let probe = Tensor::uniform(&[n, 4], 1.0, rng);
    grad_check_report(
        &(layers, xs),
        |(layers, xs)| dot(bilstm_stack_forward(layers, xs).unwrap().last().unwrap().output.data(), probe.data()),
        |(layers, xs)| {
            let tr = bilstm_stack_forward(layers, xs).unwrap();
            let mut g = layers.zeros_like();
            let dx = bilstm_stack_backward(layers, &tr, &probe, &mut g);
            (g, dx)
        },
        1e-5,
    )
}

fn language_model(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let mut lm = LanguageModel::init(3, 2, rng);
    jitter(&mut lm, rng);
    let n = rng.gen_range(1..6);
    let batch = vec![tokens(n, rng), vec![5, 7]];
    grad_check_report(
        &lm,
        |m| lm_loss(m, &batch).unwrap(),
        |m| lm_loss_and_grad(m, &batch).unwrap().1,
        1e-5,
    )
}

fn scorer(scorer: Scorer, rng: &mut ChaCha8Rng) -> GradCheckReport {
    // odd lengths: an even number of ±1 L1 slopes can cancel to an exact
    // zero gradient, where relative error is pure roundoff
    let (n, m) = (2 * rng.gen_range(0..3) + 1, 2 * rng.gen_range(0..3) + 1);
    let z = Tensor::uniform(&[n, 3], 1.5, rng);
    let zp = Tensor::uniform(&[m, 3], 1.5, rng);
    grad_check_report(
        &(z, zp),
        |(a, b)| scorer.score(a, b).unwrap(),
        |(a, b)| {
            let (_, ga, gb) = scorer.score_and_grad(a, b, 1.0).unwrap();
            (ga, gb)
        },
        1e-6,
    )
}

fn ordinal_loss(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let mut head = OrdinalHead::new();
    head.u = Tensor::uniform(&[4], 1.0, rng);
    head.b = Tensor::uniform(&[4], 2.0, rng);
    let levels: Vec<u8> = (0..6).map(|_| rng.gen_range(0..5)).collect();
    let scores = Tensor::uniform(&[6], 3.0, rng);
    let batch = |s: &Tensor| -> Vec<(f64, u8)> { s.data().iter().copied().zip(levels.iter().copied()).collect() };
    grad_check_report(
        &(head, scores),
        |(h, s)| similarity_loss(&batch(s), h).0,
        |(h, s)| {
            let (_, ds, gh) = similarity_loss(&batch(s), h);
            (gh, Tensor::from_vec(&[ds.len()], ds).unwrap())
        },
        1e-5,
    )
}

fn contact_head(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let (d, h) = (3, 4);
    let n = rng.gen_range(1..10);
    let mut head = ContactHead::init(d, h, rng);
    jitter(&mut head, rng);
    let z = Tensor::uniform(&[n, d], 1.0, rng);
    let mut map = ContactMap::empty(n);
    for i in 0..n {
        for j in i..n {
            map.set(i, j, rng.gen_bool(0.3));
        }
    }
    grad_check_report(
        &(head, z),
        |(hd, z)| contact_loss_from_logits(&hd.forward(z).unwrap().logits, &map, 2).unwrap().0,
        |(hd, z)| {
            let tr = hd.forward(z).unwrap();
            let (_, dl) = contact_loss_from_logits(&tr.logits, &map, 2).unwrap();
            let mut g = hd.zeros_like();
            let dz = hd.backward(z, &tr, &dl, &mut g);
            (g, dz)
        },
        1e-6,
    )
}

fn annotated_path(g: &Grammar) -> (usize, Vec<usize>) {
    let labels: Vec<RegionKind> = "OOMMMMMIII".chars().filter_map(RegionKind::from_letter).collect();
    (labels.len(), constrained_path(g, &labels).expect("labels fit the grammar"))
}

fn crf(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let g = Grammar::default_tm();
    let k = g.num_states();
    let (n, path) = annotated_path(&g);
    let pot = Tensor::uniform(&[n, k], 1.0, rng);
    let trans = Tensor::uniform(&[k, k], 1.0, rng);
    grad_check_report(
        &(pot, trans),
        |(p, t)| crf_nll_and_grad(&g, p, t, &path).unwrap().0,
        |(p, t)| {
            let (_, dp, dt) = crf_nll_and_grad(&g, p, t, &path).unwrap();
            (dp, dt)
        },
        1e-6,
    )
}

fn tagger(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let g = Grammar::default_tm();
    let (n, path) = annotated_path(&g);
    let x = Tensor::uniform(&[n, 4], 1.0, rng);
    let mut t = Tagger::init(4, 3, g.num_states(), rng);
    jitter(&mut t, rng);
    grad_check_report(
        &t,
        |t| t.nll_and_grad(&g, &x, &path, &mut t.zeros_like()).unwrap(),
        |t| {
            let mut gr = t.zeros_like();
            t.nll_and_grad(&g, &x, &path, &mut gr).unwrap();
            gr
        },
        1e-6,
    )
}
