use rand::Rng;
use serde::{Deserialize, Serialize};

use super::alphabet::{Token, NUM_CANONICAL};
use super::record::{hierarchy_level, HierarchyLabel};
use crate::error::{Error, Result};

pub const NUM_LEVELS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSamplerConfig {
    pub smoothing: f64,
    pub batch_size: usize,
    pub epoch_size: usize,
    pub seed: u64,
}

impl Default for PairSamplerConfig {
    fn default() -> Self {
        PairSamplerConfig {
            smoothing: 0.5,
            batch_size: 64,
            epoch_size: 100_000,
            seed: 0,
        }
    }
}

/// Level probabilities `N_t^s / Σ_u N_u^s`, with empty levels excluded.
pub fn level_probabilities(counts: &[usize], smoothing: f64) -> Vec<f64> {
    let w: Vec<f64> = counts
        .iter()
        .map(|&n| if n == 0 { 0.0 } else { (n as f64).powf(smoothing) })
        .collect();
    let total: f64 = w.iter().sum();
    if total == 0.0 {
        return vec![0.0; counts.len()];
    }
    w.into_iter().map(|x| x / total).collect()
}

/// One sampled training pair: indices into the record list plus shared level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairDraw {
    pub a: usize,
    pub b: usize,
    pub level: u8,
}

/// Two-stage sampler: draw a level from the smoothed distribution, then a
/// uniform unordered pair within that level. Draws are with replacement.
#[derive(Clone, Debug)]
pub struct PairSampler {
    by_level: Vec<Vec<(u32, u32)>>,
    probs: Vec<f64>,
}

impl PairSampler {
    /// Enumerates all unordered pairs `i < j` of `labels`.
    pub fn new(labels: &[HierarchyLabel], smoothing: f64) -> Result<Self> {
        if smoothing < 0.0 || !smoothing.is_finite() {
            return Err(Error::Config(format!("smoothing exponent must be >= 0, got {smoothing}")));
        }
        let mut by_level = vec![Vec::new(); NUM_LEVELS];
        for i in 0..labels.len() {
            for j in i + 1..labels.len() {
                let t = hierarchy_level(&labels[i], &labels[j]) as usize;
                by_level[t].push((i as u32, j as u32));
            }
        }
        let counts: Vec<usize> = by_level.iter().map(Vec::len).collect();
        if counts.iter().all(|&c| c == 0) {
            return Err(Error::data("no sequence pairs to sample"));
        }
        Ok(PairSampler {
            probs: level_probabilities(&counts, smoothing),
            by_level,
        })
    }

    pub fn level_counts(&self) -> Vec<usize> {
        self.by_level.iter().map(Vec::len).collect()
    }

    pub fn level_probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PairDraw {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut level = 0;
        for (t, &p) in self.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            level = t;
            acc += p;
            if u < acc {
                break;
            }
        }
        let pairs = &self.by_level[level];
        let (a, b) = pairs[rng.gen_range(0..pairs.len())];
        PairDraw {
            a: a as usize,
            b: b as usize,
            level: level as u8,
        }
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Vec<PairDraw> {
        (0..size).map(|_| self.sample(rng)).collect()
    }
}

/// With probability `p` per position, replaces the token by a uniform draw
/// over the canonical residues (which may equal the original).
pub fn perturb_sequence<R: Rng + ?Sized>(tokens: &[Token], p: f64, rng: &mut R) -> Vec<Token> {
    tokens
        .iter()
        .map(|&t| {
            if rng.gen::<f64>() < p {
                rng.gen_range(0..NUM_CANONICAL) as Token
            } else {
                t
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn level_probability_examples() {
        assert!(close(&level_probabilities(&[3, 1, 0, 0, 0], 1.0), &[0.75, 0.25, 0.0, 0.0, 0.0], 1e-15));
        assert!(close(&level_probabilities(&[3, 1, 0, 0, 0], 0.0), &[0.5, 0.5, 0.0, 0.0, 0.0], 1e-15));
        // √90 : √9 : √1 = 9.4868 : 3 : 1
        let p = level_probabilities(&[90, 9, 1], 0.5);
        assert!(close(&p, &[0.7034, 0.2224, 0.0741], 1e-4), "{p:?}");
    }

    #[test]
    fn empirical_frequencies_follow_smoothing() {
        let mut labels = Vec::new();
        for c in 0..3 {
            for f in 0..2 {
                for k in 0..3 {
                    labels.push(HierarchyLabel::new(&c.to_string(), &f.to_string(), "s", &k.to_string()));
                }
            }
        }
        let sampler = PairSampler::new(&labels, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut hist = [0usize; NUM_LEVELS];
        let draws = 100_000;
        for _ in 0..draws {
            let d = sampler.sample(&mut rng);
            assert_eq!(hierarchy_level(&labels[d.a], &labels[d.b]), d.level);
            assert!(d.a < d.b);
            hist[d.level as usize] += 1;
        }
        for t in 0..NUM_LEVELS {
            let freq = hist[t] as f64 / draws as f64;
            assert!((freq - sampler.level_probs()[t]).abs() < 0.02);
        }
    }

    #[test]
    fn perturbation_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let toks: Vec<Token> = (0..200).map(|i| (i % 20) as Token).collect();
        assert_eq!(perturb_sequence(&toks, 0.0, &mut rng), toks);
        let all = perturb_sequence(&toks, 1.0, &mut rng);
        assert!(all.iter().all(|&t| (t as usize) < NUM_CANONICAL));
    }

    #[test]
    fn perturbation_rate_within_three_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 10_000;
        let toks: Vec<Token> = (0..n).map(|i| (i % 20) as Token).collect();
        let out = perturb_sequence(&toks, 0.05, &mut rng);
        let changed = toks.iter().zip(&out).filter(|(a, b)| a != b).count() as f64;
        let p = 0.05 * 19.0 / 20.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((changed - n as f64 * p).abs() <= 3.0 * sigma);
    }

    #[test]
    fn perturbation_is_reproducible() {
        let toks: Vec<Token> = (0..500).map(|i| (i % 21) as Token).collect();
        let a = perturb_sequence(&toks, 0.3, &mut ChaCha8Rng::seed_from_u64(1));
        let b = perturb_sequence(&toks, 0.3, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_negative_smoothing_and_no_pairs() {
        let l = vec![HierarchyLabel::new("a", "1", "1", "1")];
        assert!(PairSampler::new(&l, 0.5).is_err());
        assert!(PairSampler::new(&[l[0].clone(), l[0].clone()], -1.0).is_err());
    }
}
