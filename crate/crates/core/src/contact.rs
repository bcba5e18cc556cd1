//! Residue contact prediction from per-position embeddings.
//!
//! Pair features `v_ij = [|z_i - z_j| ; z_i ⊙ z_j]` go through a shared
//! hidden layer with ReLU, then a single 7×7 filter (zero padding 3) and a
//! sigmoid give an n×n probability map.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ContactMap;
use crate::error::{Error, Result};
use crate::eval::metrics::{average_precision, ranking};
use crate::nn::activation::{sigmoid, softplus};
use crate::nn::params::join;
use crate::nn::{axpy, dot, Linear, Params, Tensor};

pub const KERNEL: usize = 7;
const PAD: usize = KERNEL / 2;

/// Minimum `|i - j|` scored by the training loss.
pub const DEFAULT_MIN_SEPARATION: usize = 2;

/// Separations reported by evaluation: all non-neighbours and distant pairs.
pub const EVAL_SEPARATIONS: [usize; 2] = [2, 12];

/// `n × n × 2D` pair features.
pub fn pairwise_features(z: &Tensor) -> Tensor {
    let (n, d) = (z.rows(), z.cols());
    let mut out = vec![0.0; n * n * 2 * d];
    for i in 0..n {
        for j in 0..n {
            let v = &mut out[(i * n + j) * 2 * d..(i * n + j + 1) * 2 * d];
            for (k, (a, b)) in z.row(i).iter().zip(z.row(j)).enumerate() {
                v[k] = (a - b).abs();
                v[d + k] = a * b;
            }
        }
    }
    Tensor::from_vec(&[n, n, 2 * d], out).expect("shape matches length")
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContactHead {
    pub hidden: Linear,
    /// Stored `7 × 7 × H` so each tap is a contiguous channel vector.
    pub filter: Tensor,
    pub bias: Tensor,
}

pub struct ContactTrace {
    n: usize,
    features: Tensor,
    pre: Vec<f64>,
    act: Vec<f64>,
    pub logits: Tensor,
}

impl ContactHead {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        ContactHead {
            hidden: Linear::zeros(2 * dim, hidden),
            filter: Tensor::zeros(&[KERNEL, KERNEL, hidden]),
            bias: Tensor::zeros(&[1]),
        }
    }

    pub fn init<R: Rng + ?Sized>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        let fan_in = (KERNEL * KERNEL * hidden) as f64;
        ContactHead {
            hidden: Linear::init(2 * dim, hidden, rng),
            filter: Tensor::uniform(&[KERNEL, KERNEL, hidden], 1.0 / fan_in.sqrt(), rng),
            bias: Tensor::zeros(&[1]),
        }
    }

    pub fn dim(&self) -> usize {
        self.hidden.input_dim() / 2
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden.output_dim()
    }

    pub fn forward(&self, z: &Tensor) -> Result<ContactTrace> {
        if z.rows() == 0 {
            return Err(Error::Empty("embedding sequence"));
        }
        if z.cols() != self.dim() {
            return Err(Error::shape(format!(
                "contact head expects embeddings of width {}, got {}",
                self.dim(),
                z.cols()
            )));
        }
        let n = z.rows();
        let h = self.hidden_dim();
        let features = pairwise_features(z);
        let f2 = 2 * self.dim();
        let mut pre = vec![0.0; n * n * h];
        for p in 0..n * n {
            self.hidden
                .forward_into(&features.data()[p * f2..(p + 1) * f2], &mut pre[p * h..(p + 1) * h]);
        }
        let act: Vec<f64> = pre.iter().map(|&x| x.max(0.0)).collect();
        let mut logits = Tensor::filled(&[n, n], self.bias.data()[0]);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for_each_tap(n, i, j, |tap, src| {
                    acc += dot(&self.filter.data()[tap * h..(tap + 1) * h], &act[src * h..(src + 1) * h]);
                });
                logits.data_mut()[i * n + j] += acc;
            }
        }
        Ok(ContactTrace {
            n,
            features,
            pre,
            act,
            logits,
        })
    }

    /// Raw (not symmetrized) probabilities.
    pub fn probabilities(&self, z: &Tensor) -> Result<Tensor> {
        let mut p = self.forward(z)?.logits;
        p.data_mut().iter_mut().for_each(|x| *x = sigmoid(*x));
        Ok(p)
    }

    /// Accumulates parameter gradients for `dlogits` and returns `dL/dz`.
    pub fn backward(&self, z: &Tensor, trace: &ContactTrace, dlogits: &Tensor, grads: &mut ContactHead) -> Tensor {
        let n = trace.n;
        let h = self.hidden_dim();
        let d = self.dim();
        let mut dact = vec![0.0; n * n * h];
        for i in 0..n {
            for j in 0..n {
                let g = dlogits.data()[i * n + j];
                if g == 0.0 {
                    continue;
                }
                grads.bias.data_mut()[0] += g;
                for_each_tap(n, i, j, |tap, src| {
                    axpy(g, &trace.act[src * h..(src + 1) * h], &mut grads.filter.data_mut()[tap * h..(tap + 1) * h]);
                    axpy(g, &self.filter.data()[tap * h..(tap + 1) * h], &mut dact[src * h..(src + 1) * h]);
                });
            }
        }
        for (g, &x) in dact.iter_mut().zip(&trace.pre) {
            if x <= 0.0 {
                *g = 0.0;
            }
        }
        let mut dz = Tensor::zeros(&[n, d]);
        let mut dv = vec![0.0; 2 * d];
        for i in 0..n {
            for j in 0..n {
                let p = i * n + j;
                let dpre = &dact[p * h..(p + 1) * h];
                if dpre.iter().all(|&g| g == 0.0) {
                    continue;
                }
                dv.fill(0.0);
                self.hidden.backward_into(
                    &trace.features.data()[p * 2 * d..(p + 1) * 2 * d],
                    dpre,
                    &mut grads.hidden,
                    Some(&mut dv),
                );
                for k in 0..d {
                    let (a, b) = (z.get2(i, k), z.get2(j, k));
                    let s = sign(a - b) * dv[k];
                    dz.data_mut()[i * d + k] += s + b * dv[d + k];
                    dz.data_mut()[j * d + k] += -s + a * dv[d + k];
                }
            }
        }
        dz
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Calls `f(tap, source_pair)` for every filter tap that lands inside the
/// n×n grid when centred on `(i, j)`.
#[inline]
fn for_each_tap(n: usize, i: usize, j: usize, mut f: impl FnMut(usize, usize)) {
    for di in 0..KERNEL {
        let Some(si) = (i + di).checked_sub(PAD).filter(|&s| s < n) else {
            continue;
        };
        for dj in 0..KERNEL {
            let Some(sj) = (j + dj).checked_sub(PAD).filter(|&s| s < n) else {
                continue;
            };
            f(di * KERNEL + dj, si * n + sj);
        }
    }
}

impl Params for ContactHead {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.hidden.visit(&join(prefix, "hidden"), f);
        f(join(prefix, "filter"), &self.filter);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.hidden.visit_mut(&join(prefix, "hidden"), f);
        f(join(prefix, "filter"), &mut self.filter);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

fn check_square(t: &Tensor, observed: &ContactMap) -> Result<usize> {
    let n = observed.len();
    if t.shape() != [n, n] {
        return Err(Error::shape(format!("prediction {:?} vs {n}×{n} contact map", t.shape())));
    }
    Ok(n)
}

fn masked_pairs(n: usize, min_separation: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (0..n).filter(move |&j| i.abs_diff(j) >= min_separation).map(move |j| (i, j)))
}

/// Mean binary cross entropy of probabilities over pairs with
/// `|i - j| >= min_separation`, both triangles. An empty mask gives 0.
pub fn contact_loss(probs: &Tensor, observed: &ContactMap, min_separation: usize) -> Result<f64> {
    let n = check_square(probs, observed)?;
    let (mut total, mut count) = (0.0, 0usize);
    for (i, j) in masked_pairs(n, min_separation) {
        let p = probs.get2(i, j);
        total -= if observed.get(i, j) { p.ln() } else { (1.0 - p).ln() };
        count += 1;
    }
    if count == 0 {
        log::warn!("contact loss over an empty mask (n = {n}, min separation {min_separation})");
        return Ok(0.0);
    }
    Ok(total / count as f64)
}

/// Same loss computed stably from logits, with its gradient.
pub fn contact_loss_from_logits(logits: &Tensor, observed: &ContactMap, min_separation: usize) -> Result<(f64, Tensor)> {
    let n = check_square(logits, observed)?;
    let count = masked_pairs(n, min_separation).count();
    let mut grad = Tensor::zeros(&[n, n]);
    if count == 0 {
        log::warn!("contact loss over an empty mask (n = {n}, min separation {min_separation})");
        return Ok((0.0, grad));
    }
    let scale = 1.0 / count as f64;
    let mut total = 0.0;
    for (i, j) in masked_pairs(n, min_separation) {
        let x = logits.get2(i, j);
        let y = if observed.get(i, j) { 1.0 } else { 0.0 };
        total += softplus(x) - y * x;
        grad.set2(i, j, (sigmoid(x) - y) * scale);
    }
    Ok((total * scale, grad))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContactMetrics {
    pub pairs: usize,
    pub positives: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub aupr: Option<f64>,
    pub pr_at_l: Option<f64>,
    pub pr_at_l2: Option<f64>,
    pub pr_at_l5: Option<f64>,
}

impl ContactMetrics {
    pub fn fields(&self) -> [(&'static str, Option<f64>); 7] {
        [
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
            ("aupr", self.aupr),
            ("pr_at_l", self.pr_at_l),
            ("pr_at_l2", self.pr_at_l2),
            ("pr_at_l5", self.pr_at_l5),
        ]
    }
}

/// `(p_ij + p_ji) / 2` for `i < j`, `j - i >= separation`, in `(i, j)` order.
pub fn symmetrized_pairs(probs: &Tensor, separation: usize) -> Vec<(usize, usize, f64)> {
    let n = probs.rows();
    let mut out = Vec::new();
    for i in 0..n {
        for j in (i + separation.max(1))..n {
            out.push((i, j, (probs.get2(i, j) + probs.get2(j, i)) / 2.0));
        }
    }
    out
}

/// Thresholded precision/recall/F1 (contact iff p > 0.5), AUPR and top-k
/// precision for one protein.
pub fn contact_metrics(probs: &Tensor, observed: &ContactMap, separation: usize) -> Result<ContactMetrics> {
    let n = check_square(probs, observed)?;
    let pairs = symmetrized_pairs(probs, separation);
    let scores: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    let labels: Vec<bool> = pairs.iter().map(|&(i, j, _)| observed.get(i, j)).collect();
    let positives = labels.iter().filter(|&&l| l).count();
    let (mut tp, mut fp) = (0usize, 0usize);
    for (&s, &l) in scores.iter().zip(&labels) {
        if s > 0.5 {
            if l {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    let fneg = positives - tp;
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let order = ranking(&scores);
    let top = |k: usize| {
        let k = k.min(order.len());
        ratio(order[..k].iter().filter(|&&r| labels[r]).count(), k)
    };
    Ok(ContactMetrics {
        pairs: pairs.len(),
        positives,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, positives),
        f1: ratio(2 * tp, 2 * tp + fp + fneg),
        aupr: average_precision(&scores, &labels)?,
        pr_at_l: top(n),
        pr_at_l2: top(n.div_ceil(2)),
        pr_at_l5: top(n.div_ceil(5)),
    })
}

/// Per-protein macro average; each field averages the proteins where it is
/// defined.
pub fn mean_metrics(all: &[ContactMetrics]) -> ContactMetrics {
    let avg = |get: fn(&ContactMetrics) -> Option<f64>| {
        let vals: Vec<f64> = all.iter().filter_map(get).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    ContactMetrics {
        pairs: all.iter().map(|m| m.pairs).sum(),
        positives: all.iter().map(|m| m.positives).sum(),
        precision: avg(|m| m.precision),
        recall: avg(|m| m.recall),
        f1: avg(|m| m.f1),
        aupr: avg(|m| m.aupr),
        pr_at_l: avg(|m| m.pr_at_l),
        pr_at_l2: avg(|m| m.pr_at_l2),
        pr_at_l5: avg(|m| m.pr_at_l5),
    }
}
