//! Sequence-to-sequence similarity from per-position embeddings: soft
//! symmetric alignment, the uniform-alignment and mean-embedding
//! baselines, and the ordinal regression head that maps a score to a
//! shared-hierarchy level.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::activation::{log_sigmoid, sigmoid, softplus};
use crate::nn::params::join;
use crate::nn::{Params, Tensor};

fn check_pair(z: &Tensor, zp: &Tensor) -> Result<()> {
    if z.rows() == 0 || zp.rows() == 0 {
        return Err(Error::Empty("embedding sequence"));
    }
    if z.cols() != zp.cols() {
        return Err(Error::shape(format!("embedding dims {} vs {}", z.cols(), zp.cols())));
    }
    Ok(())
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

/// `d[i][j] = ||z_i - z'_j||_1`
pub fn l1_distance_matrix(z: &Tensor, zp: &Tensor) -> Result<Tensor> {
    check_pair(z, zp)?;
    let (n, m) = (z.rows(), zp.rows());
    let mut d = Tensor::zeros(&[n, m]);
    for i in 0..n {
        let zi = z.row(i);
        for j in 0..m {
            let s: f64 = zi.iter().zip(zp.row(j)).map(|(a, b)| (a - b).abs()).sum();
            d.set2(i, j, s);
        }
    }
    Ok(d)
}

/// Pushes `g[i][j]` (gradient w.r.t. `d[i][j]`) back onto both embedding sequences.
fn l1_backward(z: &Tensor, zp: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let (n, m, dim) = (z.rows(), zp.rows(), z.cols());
    let mut dz = Tensor::zeros(&[n, dim]);
    let mut dzp = Tensor::zeros(&[m, dim]);
    for i in 0..n {
        for j in 0..m {
            let gij = g.get2(i, j);
            if gij == 0.0 {
                continue;
            }
            let zi = z.row(i);
            let zj = zp.row(j);
            for k in 0..dim {
                let s = gij * sign(zi[k] - zj[k]);
                dz.row_mut(i)[k] += s;
                dzp.row_mut(j)[k] -= s;
            }
        }
    }
    (dz, dzp)
}

/// Full record of a soft symmetric alignment.
#[derive(Clone, Debug)]
pub struct AlignmentResult {
    pub distances: Tensor,
    /// Row softmax of `-d` (each row sums to 1).
    pub alpha: Tensor,
    /// Column softmax of `-d` (each column sums to 1).
    pub beta: Tensor,
    /// `a = α + β - αβ`
    pub a: Tensor,
    /// Alignment length `A = Σ a_ij`.
    pub length: f64,
    /// `ŝ = -(1/A) Σ a_ij d_ij`
    pub score: f64,
}

/// Soft symmetric alignment score between two embedding sequences.
pub fn ssa_score(z: &Tensor, zp: &Tensor) -> Result<AlignmentResult> {
    let d = l1_distance_matrix(z, zp)?;
    let (n, m) = (d.rows(), d.cols());
    let mut alpha = Tensor::zeros(&[n, m]);
    for i in 0..n {
        let row = d.row(i);
        let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
        let out = alpha.row_mut(i);
        let mut total = 0.0;
        for j in 0..m {
            out[j] = (lo - row[j]).exp();
            total += out[j];
        }
        out.iter_mut().for_each(|v| *v /= total);
    }
    let mut beta = Tensor::zeros(&[n, m]);
    for j in 0..m {
        let lo = (0..n).map(|i| d.get2(i, j)).fold(f64::INFINITY, f64::min);
        let mut total = 0.0;
        for i in 0..n {
            let e = (lo - d.get2(i, j)).exp();
            beta.set2(i, j, e);
            total += e;
        }
        for i in 0..n {
            beta.set2(i, j, beta.get2(i, j) / total);
        }
    }
    let mut a = Tensor::zeros(&[n, m]);
    let mut length = 0.0;
    let mut weighted = 0.0;
    for k in 0..n * m {
        let (al, be) = (alpha.data()[k], beta.data()[k]);
        let v = al + be - al * be;
        a.data_mut()[k] = v;
        length += v;
        weighted += v * d.data()[k];
    }
    Ok(AlignmentResult {
        score: -weighted / length,
        distances: d,
        alpha,
        beta,
        a,
        length,
    })
}

/// Gradient of `dscore * ŝ` with respect to both embedding sequences.
pub fn ssa_backward(z: &Tensor, zp: &Tensor, res: &AlignmentResult, dscore: f64) -> (Tensor, Tensor) {
    let d = &res.distances;
    let (n, m) = (d.rows(), d.cols());
    let big_a = res.length;
    let s = res.score;
    // ∂ŝ/∂d_ij through the explicit d and through a_ij
    let mut gd = Tensor::zeros(&[n, m]);
    let mut g_alpha = Tensor::zeros(&[n, m]);
    let mut g_beta = Tensor::zeros(&[n, m]);
    for k in 0..n * m {
        let (dk, ak) = (d.data()[k], res.a.data()[k]);
        let (al, be) = (res.alpha.data()[k], res.beta.data()[k]);
        gd.data_mut()[k] = -dscore * ak / big_a;
        let ga = dscore * (-(dk + s) / big_a);
        g_alpha.data_mut()[k] = ga * (1.0 - be);
        g_beta.data_mut()[k] = ga * (1.0 - al);
    }
    // softmax backward; logits are -d
    for i in 0..n {
        let inner: f64 = (0..m).map(|j| res.alpha.get2(i, j) * g_alpha.get2(i, j)).sum();
        for j in 0..m {
            let dlogit = res.alpha.get2(i, j) * (g_alpha.get2(i, j) - inner);
            gd.set2(i, j, gd.get2(i, j) - dlogit);
        }
    }
    for j in 0..m {
        let inner: f64 = (0..n).map(|i| res.beta.get2(i, j) * g_beta.get2(i, j)).sum();
        for i in 0..n {
            let dlogit = res.beta.get2(i, j) * (g_beta.get2(i, j) - inner);
            gd.set2(i, j, gd.get2(i, j) - dlogit);
        }
    }
    l1_backward(z, zp, &gd)
}

/// Uniform-alignment score `-(1/nm) Σ d_ij`.
pub fn ua_score(z: &Tensor, zp: &Tensor) -> Result<f64> {
    let d = l1_distance_matrix(z, zp)?;
    Ok(-d.sum() / d.len() as f64)
}

pub fn ua_backward(z: &Tensor, zp: &Tensor, dscore: f64) -> (Tensor, Tensor) {
    let (n, m) = (z.rows(), zp.rows());
    let g = Tensor::filled(&[n, m], -dscore / (n * m) as f64);
    l1_backward(z, zp, &g)
}

fn column_mean(z: &Tensor) -> Vec<f64> {
    let mut mean = vec![0.0; z.cols()];
    for i in 0..z.rows() {
        for (m, v) in mean.iter_mut().zip(z.row(i)) {
            *m += v;
        }
    }
    let n = z.rows() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Mean-embedding score `-||mean(z) - mean(z')||_1`.
pub fn me_score(z: &Tensor, zp: &Tensor) -> Result<f64> {
    check_pair(z, zp)?;
    let (a, b) = (column_mean(z), column_mean(zp));
    Ok(-a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

pub fn me_backward(z: &Tensor, zp: &Tensor, dscore: f64) -> (Tensor, Tensor) {
    let (a, b) = (column_mean(z), column_mean(zp));
    let (n, m, dim) = (z.rows(), zp.rows(), z.cols());
    let mut dz = Tensor::zeros(&[n, dim]);
    let mut dzp = Tensor::zeros(&[m, dim]);
    for k in 0..dim {
        let g = -dscore * sign(a[k] - b[k]);
        for i in 0..n {
            dz.row_mut(i)[k] = g / n as f64;
        }
        for j in 0..m {
            dzp.row_mut(j)[k] = -g / m as f64;
        }
    }
    (dz, dzp)
}

/// Which sequence comparison turns two embedding sequences into a scalar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scorer {
    Ssa,
    Ua,
    Me,
}

impl Scorer {
    pub fn name(self) -> &'static str {
        match self {
            Scorer::Ssa => "ssa",
            Scorer::Ua => "ua",
            Scorer::Me => "me",
        }
    }

    pub fn score(self, z: &Tensor, zp: &Tensor) -> Result<f64> {
        match self {
            Scorer::Ssa => Ok(ssa_score(z, zp)?.score),
            Scorer::Ua => ua_score(z, zp),
            Scorer::Me => me_score(z, zp),
        }
    }

    /// Score plus the gradient of `dscore * score` w.r.t. both inputs.
    pub fn score_and_grad(self, z: &Tensor, zp: &Tensor, dscore: f64) -> Result<(f64, Tensor, Tensor)> {
        Ok(match self {
            Scorer::Ssa => {
                let r = ssa_score(z, zp)?;
                let (a, b) = ssa_backward(z, zp, &r, dscore);
                (r.score, a, b)
            }
            Scorer::Ua => {
                let s = ua_score(z, zp)?;
                let (a, b) = ua_backward(z, zp, dscore);
                (s, a, b)
            }
            Scorer::Me => {
                let s = me_score(z, zp)?;
                let (a, b) = me_backward(z, zp, dscore);
                (s, a, b)
            }
        })
    }
}

impl FromStr for Scorer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ssa" => Ok(Scorer::Ssa),
            "ua" => Ok(Scorer::Ua),
            "me" => Ok(Scorer::Me),
            other => Err(Error::Config(format!("unknown scorer {other:?}"))),
        }
    }
}

pub const NUM_THRESHOLDS: usize = 4;

/// Ordinal regression head: `p(y ≥ t) = σ(θ_t ŝ + b_t)` for `t = 1..4`,
/// with `θ_t = softplus(u_t) ≥ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct OrdinalHead {
    pub u: Tensor,
    pub b: Tensor,
}

/// Plain `(θ, b)` view of an ordinal head.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrdinalCoefficients {
    pub theta: [f64; NUM_THRESHOLDS],
    pub bias: [f64; NUM_THRESHOLDS],
}

impl Default for OrdinalHead {
    fn default() -> Self {
        OrdinalHead::new()
    }
}

impl OrdinalHead {
    /// `θ_t = 1` and biases placing the thresholds at `ŝ = -2, -1.5, -1, -0.5`.
    pub fn new() -> Self {
        let u0 = (std::f64::consts::E - 1.0).ln();
        OrdinalHead {
            u: Tensor::filled(&[NUM_THRESHOLDS], u0),
            b: Tensor::from_vec(&[NUM_THRESHOLDS], vec![2.0, 1.5, 1.0, 0.5]).expect("static shape"),
        }
    }

    pub fn coefficients(&self) -> OrdinalCoefficients {
        let mut c = OrdinalCoefficients {
            theta: [0.0; NUM_THRESHOLDS],
            bias: [0.0; NUM_THRESHOLDS],
        };
        for t in 0..NUM_THRESHOLDS {
            c.theta[t] = softplus(self.u.data()[t]);
            c.bias[t] = self.b.data()[t];
        }
        c
    }
}

impl Params for OrdinalHead {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "u"), &self.u);
        f(join(prefix, "b"), &self.b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "u"), &mut self.u);
        f(join(prefix, "b"), &mut self.b);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrdinalProbabilities {
    /// `p(y ≥ t)` for `t = 1..4` (index 0 is `t = 1`).
    pub at_least: [f64; NUM_THRESHOLDS],
    /// `p(y = t) = p(y ≥ t)(1 - p(y ≥ t+1))` for `t = 0..4`, with
    /// `p(y ≥ 0) = 1` and `p(y ≥ 5) = 0`. Not renormalized.
    pub exactly: [f64; NUM_THRESHOLDS + 1],
}

pub fn ordinal_probabilities(score: f64, c: &OrdinalCoefficients) -> OrdinalProbabilities {
    let mut at_least = [0.0; NUM_THRESHOLDS];
    for t in 0..NUM_THRESHOLDS {
        at_least[t] = sigmoid(c.theta[t] * score + c.bias[t]);
    }
    let ge = |t: usize| match t {
        0 => 1.0,
        5 => 0.0,
        _ => at_least[t - 1],
    };
    let mut exactly = [0.0; NUM_THRESHOLDS + 1];
    for (t, e) in exactly.iter_mut().enumerate() {
        *e = ge(t) * (1.0 - ge(t + 1));
    }
    OrdinalProbabilities { at_least, exactly }
}

/// Argmax of `p(y = t)`; ties go to the smaller level.
pub fn predict_level(score: f64, c: &OrdinalCoefficients) -> u8 {
    let p = ordinal_probabilities(score, c);
    let mut best = 0;
    for t in 1..=NUM_THRESHOLDS {
        if p.exactly[t] > p.exactly[best] {
            best = t;
        }
    }
    best as u8
}

/// Negative log-likelihood of level `y` under the cumulative binary
/// classifiers, for one pair.
pub fn pair_similarity_loss(score: f64, level: u8, c: &OrdinalCoefficients) -> f64 {
    let mut loss = 0.0;
    for t in 0..NUM_THRESHOLDS {
        let x = c.theta[t] * score + c.bias[t];
        loss -= if level as usize > t { log_sigmoid(x) } else { log_sigmoid(-x) };
    }
    loss
}

/// Mean similarity loss over a batch, the gradient w.r.t. every score, and
/// the head gradient.
pub fn similarity_loss(batch: &[(f64, u8)], head: &OrdinalHead) -> (f64, Vec<f64>, OrdinalHead) {
    let c = head.coefficients();
    let mut grads = head.zeros_like();
    let mut dscores = Vec::with_capacity(batch.len());
    let mut total = 0.0;
    let scale = 1.0 / batch.len().max(1) as f64;
    for &(s, y) in batch {
        total += pair_similarity_loss(s, y, &c);
        let mut ds = 0.0;
        for t in 0..NUM_THRESHOLDS {
            let x = c.theta[t] * s + c.bias[t];
            let target = if y as usize > t { 1.0 } else { 0.0 };
            let dx = (sigmoid(x) - target) * scale;
            ds += dx * c.theta[t];
            // dθ/du = σ(u)
            grads.u.data_mut()[t] += dx * s * sigmoid(head.u.data()[t]);
            grads.b.data_mut()[t] += dx;
        }
        dscores.push(ds);
    }
    (total * scale, dscores, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn col(v: &[f64]) -> Tensor {
        Tensor::from_vec(&[v.len(), 1], v.to_vec()).unwrap()
    }

    /// Direct transcription of the alignment formulas without any
    /// stabilization or shared code paths.
    fn naive_ssa(z: &Tensor, zp: &Tensor) -> (Vec<Vec<f64>>, f64, f64) {
        let (n, m) = (z.rows(), zp.rows());
        let d = |i: usize, j: usize| -> f64 { z.row(i).iter().zip(zp.row(j)).map(|(a, b)| (a - b).abs()).sum() };
        let mut a = vec![vec![0.0; m]; n];
        for i in 0..n {
            for j in 0..m {
                let alpha = (-d(i, j)).exp() / (0..m).map(|k| (-d(i, k)).exp()).sum::<f64>();
                let beta = (-d(i, j)).exp() / (0..n).map(|k| (-d(k, j)).exp()).sum::<f64>();
                a[i][j] = alpha + beta - alpha * beta;
            }
        }
        let big_a: f64 = a.iter().flatten().sum();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..m {
                s += a[i][j] * d(i, j);
            }
        }
        (a, big_a, -s / big_a)
    }

    #[test]
    fn distance_examples() {
        let z = Tensor::zeros(&[1, 3]);
        assert_eq!(l1_distance_matrix(&z, &z).unwrap().data(), &[0.0]);
        let d = l1_distance_matrix(&col(&[0.0, 2.0]), &col(&[0.0])).unwrap();
        assert_eq!(d.data(), &[0.0, 2.0]);
        assert!(l1_distance_matrix(&Tensor::zeros(&[1, 2]), &Tensor::zeros(&[1, 3])).is_err());
    }

    #[test]
    fn single_cell_alignment() {
        let z = Tensor::from_vec(&[1, 2], vec![0.5, -1.0]).unwrap();
        let zp = Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap();
        let r = ssa_score(&z, &zp).unwrap();
        assert_eq!((r.alpha.data()[0], r.beta.data()[0], r.a.data()[0], r.length), (1.0, 1.0, 1.0, 1.0));
        assert!((r.score + 2.5).abs() < 1e-15);
        assert!((ua_score(&z, &zp).unwrap() - r.score).abs() < 1e-15);
        assert!((me_score(&z, &zp).unwrap() - r.score).abs() < 1e-15);
    }

    #[test]
    fn hand_derived_fixtures() {
        let r = ssa_score(&col(&[0.0, 2.0]), &col(&[0.0])).unwrap();
        assert_eq!(r.alpha.data(), &[1.0, 1.0]);
        assert!((r.beta.data()[0] - 0.8808).abs() < 1e-4 && (r.beta.data()[1] - 0.1192).abs() < 1e-4);
        assert!((r.a.data()[0] - 1.0).abs() < 1e-12 && (r.a.data()[1] - 1.0).abs() < 1e-12);
        assert!((r.length - 2.0).abs() < 1e-12 && (r.score + 1.0).abs() < 1e-12);

        let r = ssa_score(&col(&[0.0, 1.0]), &col(&[0.0, 1.0])).unwrap();
        let expect_a = [0.9277, 0.4655, 0.4655, 0.9277];
        for (x, e) in r.a.data().iter().zip(expect_a) {
            assert!((x - e).abs() < 1e-4);
        }
        assert!((r.alpha.data()[0] - 0.7311).abs() < 1e-4 && (r.alpha.data()[1] - 0.2689).abs() < 1e-4);
        assert!((r.length - 2.7864).abs() < 1e-4);
        assert!((r.score + 0.3341).abs() < 1e-4);
    }

    #[test]
    fn matches_naive_formulas() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let (n, m, d) = (rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(1..4));
            let z = Tensor::uniform(&[n, d], 2.0, &mut rng);
            let zp = Tensor::uniform(&[m, d], 2.0, &mut rng);
            let r = ssa_score(&z, &zp).unwrap();
            let (a, big_a, s) = naive_ssa(&z, &zp);
            assert!((r.length - big_a).abs() < 1e-12);
            assert!((r.score - s).abs() < 1e-12);
            for i in 0..n {
                for j in 0..m {
                    assert!((r.a.get2(i, j) - a[i][j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn baseline_examples() {
        assert!((ua_score(&col(&[0.0, 1.0]), &col(&[0.0, 1.0])).unwrap() + 0.5).abs() < 1e-15);
        let same = Tensor::filled(&[3, 2], 0.7);
        assert_eq!(ua_score(&same, &Tensor::filled(&[2, 2], 0.7)).unwrap(), 0.0);
        assert_eq!(me_score(&col(&[0.0, 2.0]), &col(&[1.0])).unwrap(), 0.0);
        assert!(ssa_score(&Tensor::zeros(&[0, 2]), &Tensor::zeros(&[1, 2])).is_err());
        assert!(me_score(&Tensor::zeros(&[1, 2]), &Tensor::zeros(&[0, 2])).is_err());
    }

    #[test]
    fn scorer_gradients_match_finite_differences() {
        for scorer in [Scorer::Ssa, Scorer::Ua, Scorer::Me] {
            for seed in 0..20u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                // odd lengths: an even number of ±1 L1 slopes can cancel to an
                // exact zero gradient, where relative error is pure roundoff
                let (n, m) = (2 * rng.gen_range(0..3) + 1, 2 * rng.gen_range(0..3) + 1);
                let z = Tensor::uniform(&[n, 3], 1.5, &mut rng);
                let zp = Tensor::uniform(&[m, 3], 1.5, &mut rng);
                let err = grad_check(
                    &(z, zp),
                    |(a, b)| scorer.score(a, b).unwrap(),
                    |(a, b)| {
                        let (_, ga, gb) = scorer.score_and_grad(a, b, 1.0).unwrap();
                        (ga, gb)
                    },
                    1e-6,
                );
                assert!(err <= 1e-4, "{scorer:?} seed {seed}: {err}");
            }
        }
    }

    #[test]
    fn zero_bias_zero_slope_masses() {
        let c = OrdinalCoefficients {
            theta: [0.0; 4],
            bias: [0.0; 4],
        };
        let p = ordinal_probabilities(-3.0, &c);
        assert_eq!(p.at_least, [0.5; 4]);
        assert_eq!(p.exactly, [0.5, 0.25, 0.25, 0.25, 0.5]);
        assert_eq!(predict_level(-3.0, &c), 0);
        let loss = pair_similarity_loss(-3.0, 2, &c);
        assert!((loss - 4.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn limits_of_the_ordinal_head() {
        let head = OrdinalHead::new();
        let c = head.coefficients();
        let p = ordinal_probabilities(-1e6, &c);
        assert!(p.at_least.iter().all(|&x| x < 1e-12));
        assert!((p.exactly[0] - 1.0).abs() < 1e-12);
        assert_eq!(predict_level(-1e6, &c), 0);
        assert_eq!(predict_level(0.0, &c), 4);
        let mut prev = ordinal_probabilities(-5.0, &c).at_least;
        for k in 1..100 {
            let cur = ordinal_probabilities(-5.0 + 0.05 * k as f64, &c).at_least;
            assert!(cur.iter().zip(&prev).all(|(a, b)| a > b));
            prev = cur;
        }
    }

    #[test]
    fn confident_head_has_small_loss() {
        let c = OrdinalCoefficients {
            theta: [1.0; 4],
            bias: [40.0, 30.0, -30.0, -40.0],
        };
        assert!(pair_similarity_loss(0.0, 2, &c) < 1e-12);
    }

    #[test]
    fn similarity_loss_gradients() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut head = OrdinalHead::new();
            head.u = Tensor::uniform(&[4], 1.0, &mut rng);
            head.b = Tensor::uniform(&[4], 2.0, &mut rng);
            let levels: Vec<u8> = (0..6).map(|_| rng.gen_range(0..5)).collect();
            let scores = Tensor::uniform(&[6], 3.0, &mut rng);
            let err = grad_check(
                &(head, scores),
                |(h, s)| {
                    let batch: Vec<(f64, u8)> = s.data().iter().copied().zip(levels.iter().copied()).collect();
                    similarity_loss(&batch, h).0
                },
                |(h, s)| {
                    let batch: Vec<(f64, u8)> = s.data().iter().copied().zip(levels.iter().copied()).collect();
                    let (_, ds, gh) = similarity_loss(&batch, h);
                    (gh, Tensor::from_vec(&[6], ds).unwrap())
                },
                1e-5,
            );
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn embedding(max_rows: usize, dim: usize) -> impl Strategy<Value = Tensor> {
            (1..=max_rows).prop_flat_map(move |n| {
                proptest::collection::vec(-3.0f64..3.0, n * dim)
                    .prop_map(move |v| Tensor::from_vec(&[n, dim], v).unwrap())
            })
        }

        proptest! {
            #[test]
            fn scores_are_symmetric(z in embedding(6, 3), zp in embedding(6, 3)) {
                let r = ssa_score(&z, &zp).unwrap();
                let rt = ssa_score(&zp, &z).unwrap();
                prop_assert!((r.score - rt.score).abs() <= 1e-9);
                prop_assert!((r.length - rt.length).abs() <= 1e-9);
                for i in 0..z.rows() {
                    for j in 0..zp.rows() {
                        prop_assert!((r.a.get2(i, j) - rt.a.get2(j, i)).abs() <= 1e-9);
                    }
                }
                prop_assert!((ua_score(&z, &zp).unwrap() - ua_score(&zp, &z).unwrap()).abs() <= 1e-9);
                prop_assert!((me_score(&z, &zp).unwrap() - me_score(&zp, &z).unwrap()).abs() <= 1e-9);
            }

            #[test]
            fn alignment_is_stochastic_and_bounded(z in embedding(6, 2), zp in embedding(6, 2)) {
                let r = ssa_score(&z, &zp).unwrap();
                let (n, m) = (z.rows(), zp.rows());
                for i in 0..n {
                    let s: f64 = (0..m).map(|j| r.alpha.get2(i, j)).sum();
                    prop_assert!((s - 1.0).abs() <= 1e-9);
                }
                for j in 0..m {
                    let s: f64 = (0..n).map(|i| r.beta.get2(i, j)).sum();
                    prop_assert!((s - 1.0).abs() <= 1e-9);
                }
                // a = 1 - (1-α)(1-β) reaches 1 only when a softmax has a single entry
                let upper_open = n > 1 && m > 1;
                let in_range = r.a.data().iter().all(|&v| v > 0.0 && (v < 1.0 || (!upper_open && v == 1.0)));
                prop_assert!(in_range);
                prop_assert!(r.length > 0.0);
                prop_assert!(r.score <= 0.0);
                prop_assert!(ua_score(&z, &zp).unwrap() <= 0.0);
                prop_assert!(me_score(&z, &zp).unwrap() <= 0.0);
            }

            #[test]
            fn cumulative_probabilities_increase(
                u in proptest::array::uniform4(-3.0f64..3.0),
                b in proptest::array::uniform4(-3.0f64..3.0),
                s in -10.0f64..0.0,
                ds in 1e-3f64..2.0,
            ) {
                let head = OrdinalHead {
                    u: Tensor::from_vec(&[4], u.to_vec()).unwrap(),
                    b: Tensor::from_vec(&[4], b.to_vec()).unwrap(),
                };
                let c = head.coefficients();
                let lo = ordinal_probabilities(s, &c).at_least;
                let hi = ordinal_probabilities(s + ds, &c).at_least;
                for t in 0..NUM_THRESHOLDS {
                    prop_assert!(hi[t] > lo[t]);
                }
            }
        }
    }
}
