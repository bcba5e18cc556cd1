//! Linear-chain CRF over a [`Grammar`]: path scores, the log partition
//! function, marginals, Viterbi decoding.
//!
//! `potentials` is `n × S` (per-position state scores) and `trans` is
//! `S × S` (learned transition scores). Transitions the grammar forbids, and
//! disallowed start/end states, score `-inf` whatever `trans` holds.

use super::grammar::Grammar;
use crate::data::{regions_from_labels, Region, RegionKind};
use crate::error::{Error, Result};
use crate::nn::Tensor;

const NEG_INF: f64 = f64::NEG_INFINITY;

fn lse(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(NEG_INF, f64::max);
    if m == NEG_INF {
        return NEG_INF;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn check(g: &Grammar, potentials: &Tensor, trans: &Tensor) -> Result<usize> {
    let k = g.num_states();
    if potentials.rows() == 0 {
        return Err(Error::Empty("sequence"));
    }
    if potentials.cols() != k || trans.shape() != [k, k] {
        return Err(Error::shape(format!(
            "{k}-state grammar with potentials {:?} and transitions {:?}",
            potentials.shape(),
            trans.shape()
        )));
    }
    Ok(k)
}

#[inline]
fn edge(g: &Grammar, trans: &Tensor, a: usize, b: usize) -> f64 {
    if g.allowed(a, b) {
        trans.get2(a, b)
    } else {
        NEG_INF
    }
}

#[inline]
fn start_score(g: &Grammar, s: usize) -> f64 {
    if g.is_start(s) {
        0.0
    } else {
        NEG_INF
    }
}

#[inline]
fn end_score(g: &Grammar, s: usize) -> f64 {
    if g.is_end(s) {
        0.0
    } else {
        NEG_INF
    }
}

/// Unnormalized score of `path`; an error if the grammar forbids it.
pub fn path_score(g: &Grammar, potentials: &Tensor, trans: &Tensor, path: &[usize]) -> Result<f64> {
    check(g, potentials, trans)?;
    if path.len() != potentials.rows() {
        return Err(Error::shape(format!("path of length {} for {} positions", path.len(), potentials.rows())));
    }
    if let Some(&s) = path.iter().find(|&&s| s >= g.num_states()) {
        return Err(Error::data(format!("state index {s} out of range")));
    }
    let mut score = start_score(g, path[0]) + end_score(g, path[path.len() - 1]);
    for (i, &s) in path.iter().enumerate() {
        score += potentials.get2(i, s);
        if i > 0 {
            score += edge(g, trans, path[i - 1], s);
        }
    }
    if score == NEG_INF {
        return Err(Error::data("label path violates the grammar"));
    }
    Ok(score)
}

struct Messages {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    log_z: f64,
}

fn messages(g: &Grammar, potentials: &Tensor, trans: &Tensor) -> Result<Messages> {
    let k = check(g, potentials, trans)?;
    let n = potentials.rows();
    let mut alpha = vec![NEG_INF; n * k];
    for s in 0..k {
        alpha[s] = start_score(g, s) + potentials.get2(0, s);
    }
    for i in 1..n {
        for t in 0..k {
            let prev = &alpha[(i - 1) * k..i * k];
            alpha[i * k + t] = potentials.get2(i, t) + lse((0..k).map(|s| prev[s] + edge(g, trans, s, t)));
        }
    }
    let mut beta = vec![NEG_INF; n * k];
    for s in 0..k {
        beta[(n - 1) * k + s] = end_score(g, s);
    }
    for i in (0..n - 1).rev() {
        for s in 0..k {
            let next = &beta[(i + 1) * k..(i + 2) * k];
            beta[i * k + s] = lse((0..k).map(|t| edge(g, trans, s, t) + potentials.get2(i + 1, t) + next[t]));
        }
    }
    let log_z = lse((0..k).map(|s| alpha[(n - 1) * k + s] + end_score(g, s)));
    if !(log_z > NEG_INF) {
        return Err(Error::Grammar(format!("no path of length {n} is feasible")));
    }
    Ok(Messages { alpha, beta, log_z })
}

pub fn log_partition(g: &Grammar, potentials: &Tensor, trans: &Tensor) -> Result<f64> {
    Ok(messages(g, potentials, trans)?.log_z)
}

/// `log p(path) = score(path) − log Z`.
pub fn crf_log_likelihood(g: &Grammar, potentials: &Tensor, trans: &Tensor, path: &[usize]) -> Result<f64> {
    Ok(path_score(g, potentials, trans, path)? - log_partition(g, potentials, trans)?)
}

/// Per-position state marginals `p(y_i = s)`, `n × S`.
pub fn marginals(g: &Grammar, potentials: &Tensor, trans: &Tensor) -> Result<Tensor> {
    let m = messages(g, potentials, trans)?;
    let data = m.alpha.iter().zip(&m.beta).map(|(a, b)| (a + b - m.log_z).exp()).collect();
    Tensor::from_vec(potentials.shape(), data)
}

/// Negative log-likelihood of `path` with its gradients with respect to
/// the potentials and the transition scores.
pub fn crf_nll_and_grad(g: &Grammar, potentials: &Tensor, trans: &Tensor, path: &[usize]) -> Result<(f64, Tensor, Tensor)> {
    let score = path_score(g, potentials, trans, path)?;
    let m = messages(g, potentials, trans)?;
    let (n, k) = (potentials.rows(), g.num_states());
    let mut dpot = Tensor::zeros(&[n, k]);
    for (d, (a, b)) in dpot.data_mut().iter_mut().zip(m.alpha.iter().zip(&m.beta)) {
        *d = (a + b - m.log_z).exp();
    }
    let mut dtrans = Tensor::zeros(&[k, k]);
    for i in 0..n - 1 {
        for a in 0..k {
            let left = m.alpha[i * k + a];
            if left == NEG_INF {
                continue;
            }
            for b in 0..k {
                if !g.allowed(a, b) {
                    continue;
                }
                let lp = left + trans.get2(a, b) + potentials.get2(i + 1, b) + m.beta[(i + 1) * k + b] - m.log_z;
                dtrans.data_mut()[a * k + b] += lp.exp();
            }
        }
    }
    for (i, &s) in path.iter().enumerate() {
        dpot.data_mut()[i * k + s] -= 1.0;
        if i > 0 {
            dtrans.data_mut()[path[i - 1] * k + s] -= 1.0;
        }
    }
    Ok((m.log_z - score, dpot, dtrans))
}

/// Highest-scoring feasible path. Ties go to the lower state index, decided
/// from the last position backwards.
pub fn viterbi(g: &Grammar, potentials: &Tensor, trans: &Tensor) -> Result<Vec<usize>> {
    let k = check(g, potentials, trans)?;
    let n = potentials.rows();
    let mut best = vec![NEG_INF; n * k];
    let mut back = vec![0usize; n * k];
    for s in 0..k {
        best[s] = start_score(g, s) + potentials.get2(0, s);
    }
    for i in 1..n {
        for t in 0..k {
            let (mut arg, mut top) = (0, NEG_INF);
            for s in 0..k {
                let v = best[(i - 1) * k + s] + edge(g, trans, s, t);
                if v > top {
                    top = v;
                    arg = s;
                }
            }
            best[i * k + t] = top + potentials.get2(i, t);
            back[i * k + t] = arg;
        }
    }
    let (mut state, mut top) = (0, NEG_INF);
    for s in 0..k {
        let v = best[(n - 1) * k + s] + end_score(g, s);
        if v > top {
            top = v;
            state = s;
        }
    }
    if top == NEG_INF || top.is_nan() {
        return Err(Error::Grammar(format!("no path of length {n} is feasible")));
    }
    let mut path = vec![0; n];
    path[n - 1] = state;
    for i in (1..n).rev() {
        state = back[i * k + state];
        path[i - 1] = state;
    }
    Ok(path)
}

/// A grammar-respecting state path whose regions equal `labels`.
pub fn constrained_path(g: &Grammar, labels: &[RegionKind]) -> Result<Vec<usize>> {
    let k = g.num_states();
    let mut pot = Tensor::zeros(&[labels.len(), k]);
    for (i, &l) in labels.iter().enumerate() {
        for s in 0..k {
            if g.region(s) != l {
                pot.set2(i, s, NEG_INF);
            }
        }
    }
    viterbi(g, &pot, &Tensor::zeros(&[k, k]))
        .map_err(|_| Error::data("region labels cannot be produced by the grammar"))
}

/// Maximal runs of one region kind; chained states collapse together.
pub fn states_to_regions(g: &Grammar, path: &[usize]) -> Vec<Region> {
    let labels: Vec<RegionKind> = path.iter().map(|&s| g.region(s)).collect();
    regions_from_labels(&labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_paths(n: usize, k: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..n {
            out = out
                .into_iter()
                .flat_map(|p| {
                    (0..k).map(move |s| {
                        let mut q = p.clone();
                        q.push(s);
                        q
                    })
                })
                .collect();
        }
        out
    }

    fn random_grammar(k: usize, rng: &mut ChaCha8Rng) -> Grammar {
        loop {
            let allowed = (0..k * k).map(|_| rng.gen_bool(0.6)).collect();
            let start = (0..k).map(|_| rng.gen_bool(0.6)).collect();
            let end = (0..k).map(|_| rng.gen_bool(0.6)).collect();
            if let Ok(g) = Grammar::from_parts(vec![RegionKind::Globular; k], allowed, start, end) {
                return g;
            }
        }
    }

    /// Score of every path with the grammar applied; `None` if forbidden.
    fn brute_scores(g: &Grammar, pot: &Tensor, trans: &Tensor) -> Vec<(Vec<usize>, f64)> {
        all_paths(pot.rows(), g.num_states())
            .into_iter()
            .filter_map(|p| path_score(g, pot, trans, &p).ok().map(|s| (p, s)))
            .collect()
    }

    #[test]
    fn single_state_path_has_probability_one() {
        let g = Grammar::unconstrained(1);
        let pot = Tensor::from_vec(&[4, 1], vec![0.3, -2.0, 1.0, 5.0]).unwrap();
        let trans = Tensor::filled(&[1, 1], 0.7);
        assert!(crf_log_likelihood(&g, &pot, &trans, &[0; 4]).unwrap().abs() < 1e-12);
        assert_eq!(viterbi(&g, &pot, &trans).unwrap(), vec![0; 4]);
    }

    #[test]
    fn uniform_potentials_give_minus_n_log_k() {
        for (n, k) in [(1, 2), (3, 3), (5, 4), (7, 2)] {
            let g = Grammar::unconstrained(k);
            let pot = Tensor::zeros(&[n, k]);
            let trans = Tensor::zeros(&[k, k]);
            let path: Vec<usize> = (0..n).map(|i| i % k).collect();
            let ll = crf_log_likelihood(&g, &pot, &trans, &path).unwrap();
            assert!((ll + n as f64 * (k as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn partition_and_viterbi_match_enumeration() {
        for seed in 0..300 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = rng.gen_range(1..=4);
            let n = rng.gen_range(1..=6);
            let g = random_grammar(k, &mut rng);
            // Integer scores in half the cases so exact ties occur.
            let ties = seed % 2 == 0;
            let draw = |r: &mut ChaCha8Rng| if ties { r.gen_range(-2..=2) as f64 } else { r.gen_range(-2.0..2.0) };
            let pot = Tensor::from_vec(&[n, k], (0..n * k).map(|_| draw(&mut rng)).collect()).unwrap();
            let trans = Tensor::from_vec(&[k, k], (0..k * k).map(|_| draw(&mut rng)).collect()).unwrap();
            let scored = brute_scores(&g, &pot, &trans);
            if scored.is_empty() {
                assert!(log_partition(&g, &pot, &trans).is_err());
                assert!(viterbi(&g, &pot, &trans).is_err());
                continue;
            }
            let brute_z = lse(scored.iter().map(|p| p.1));
            let log_z = log_partition(&g, &pot, &trans).unwrap();
            assert!((log_z - brute_z).abs() < 1e-8, "seed {seed}");
            let total: f64 = scored.iter().map(|p| (p.1 - log_z).exp()).sum();
            assert!((total - 1.0).abs() < 1e-8);
            let top = scored.iter().map(|p| p.1).fold(NEG_INF, f64::max);
            let expected = scored
                .iter()
                .filter(|p| p.1 == top)
                .map(|p| p.0.iter().rev().copied().collect::<Vec<_>>())
                .min()
                .map(|r| r.into_iter().rev().collect::<Vec<_>>())
                .unwrap();
            assert_eq!(viterbi(&g, &pot, &trans).unwrap(), expected, "seed {seed}");
        }
    }

    #[test]
    fn marginals_match_enumeration() {
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (k, n) = (3, 4);
            let g = random_grammar(k, &mut rng);
            let pot = Tensor::uniform(&[n, k], 1.5, &mut rng);
            let trans = Tensor::uniform(&[k, k], 1.5, &mut rng);
            let scored = brute_scores(&g, &pot, &trans);
            if scored.is_empty() {
                continue;
            }
            let log_z = log_partition(&g, &pot, &trans).unwrap();
            let m = marginals(&g, &pot, &trans).unwrap();
            for i in 0..n {
                for s in 0..k {
                    let p: f64 = scored.iter().filter(|x| x.0[i] == s).map(|x| (x.1 - log_z).exp()).sum();
                    assert!((m.get2(i, s) - p).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let g = Grammar::default_tm();
        let k = g.num_states();
        let labels: Vec<RegionKind> = "IIIMMMMMMOOSS"
            .chars()
            .take(11)
            .map(|c| RegionKind::from_letter(c).unwrap())
            .collect();
        let path = constrained_path(&g, &labels).unwrap();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pot = Tensor::uniform(&[labels.len(), k], 1.0, &mut rng);
            let trans = Tensor::uniform(&[k, k], 1.0, &mut rng);
            let err = grad_check(
                &(pot, trans),
                |(p, t)| crf_nll_and_grad(&g, p, t, &path).unwrap().0,
                |(p, t)| {
                    let (_, dp, dt) = crf_nll_and_grad(&g, p, t, &path).unwrap();
                    (dp, dt)
                },
                1e-6,
            );
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn decoded_paths_never_use_forbidden_moves() {
        let g = Grammar::default_tm();
        let k = g.num_states();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.gen_range(1..40);
            let pot = Tensor::uniform(&[n, k], 5.0, &mut rng);
            let trans = Tensor::uniform(&[k, k], 5.0, &mut rng);
            let path = viterbi(&g, &pot, &trans).unwrap();
            assert!(g.is_start(path[0]) && g.is_end(path[n - 1]));
            assert!(path.windows(2).all(|w| g.allowed(w[0], w[1])));
        }
    }

    #[test]
    fn violating_path_is_an_error() {
        let g = Grammar::default_tm();
        let k = g.num_states();
        let pot = Tensor::zeros(&[3, k]);
        let trans = Tensor::zeros(&[k, k]);
        // sp1 -> sp1 is not allowed.
        assert!(crf_log_likelihood(&g, &pot, &trans, &[0, 0, 0]).is_err());
        // Length-2 sequence cannot hold a complete signal peptide, so "SS" has no path.
        let ss = [RegionKind::SignalPeptide; 2];
        assert!(constrained_path(&g, &ss).is_err());
    }

    #[test]
    fn region_collapse() {
        let g = Grammar::default_tm();
        let glob = vec![17; 9];
        assert_eq!(
            states_to_regions(&g, &glob),
            vec![Region {
                kind: RegionKind::Globular,
                start: 0,
                end: 9
            }]
        );
        let sp_out = [0, 1, 2, 3, 4, 4, 6, 6];
        let r = states_to_regions(&g, &sp_out);
        assert_eq!(r.len(), 2);
        assert_eq!((r[0].kind, r[0].end), (RegionKind::SignalPeptide, 6));
        assert_eq!(r[1].kind, RegionKind::Outside);
        // in, helix in->out, out, helix out->in, in, helix in->out (adjacent chains).
        let mut labels = String::from("II");
        labels.push_str(&"M".repeat(6));
        labels.push_str("OOO");
        labels.push_str(&"M".repeat(5));
        labels.push('I');
        labels.push_str(&"M".repeat(7));
        labels.push('O');
        let kinds: Vec<RegionKind> = labels.chars().map(|c| RegionKind::from_letter(c).unwrap()).collect();
        let path = constrained_path(&g, &kinds).unwrap();
        let regions = states_to_regions(&g, &path);
        let tm = regions.iter().filter(|r| r.kind == RegionKind::Transmembrane).count();
        assert_eq!(tm, 3);
        assert_eq!(regions.len(), 7);
    }
}
