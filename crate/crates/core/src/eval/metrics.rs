use crate::error::{Error, Result};

fn check_lengths(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::shape(format!("{} scores vs {} labels", xs.len(), ys.len())));
    }
    Ok(())
}

/// Product-moment correlation; `None` for fewer than two points or a
/// constant input.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<Option<f64>> {
    check_lengths(xs, ys)?;
    let n = xs.len();
    if n < 2 {
        return Ok(None);
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

/// 1-based ranks; tied values share the mean of their ranks.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && xs[idx[end]] == xs[idx[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &k in &idx[start..end] {
            ranks[k] = r;
        }
        start = end;
    }
    ranks
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<Option<f64>> {
    check_lengths(xs, ys)?;
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// Indices sorted by score descending; ties keep input order.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// `Σ_n (R_n - R_{n-1}) P_n` down the ranking. `None` without positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Ok(None);
    }
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (rank, &i) in ranking(scores).iter().enumerate() {
        if labels[i] {
            hits += 1;
            ap += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(Some(ap / positives as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Recomputes precision and recall from scratch at every cut-off of the
    /// ranking and sums the recall increments weighted by precision.
    fn all_cutpoints_ap(scores: &[f64], labels: &[bool]) -> f64 {
        let order = ranking(scores);
        let total = labels.iter().filter(|&&l| l).count() as f64;
        let mut prev_recall = 0.0;
        let mut ap = 0.0;
        for k in 1..=order.len() {
            let tp = order[..k].iter().filter(|&&i| labels[i]).count() as f64;
            let (p, r) = (tp / k as f64, tp / total);
            ap += (r - prev_recall) * p;
            prev_recall = r;
        }
        ap
    }

    #[test]
    fn correlation_examples() {
        let xs = [1.0, 2.0, 3.0, 4.5];
        let neg: Vec<f64> = xs.iter().map(|v| -v).collect();
        assert!((pearson(&xs, &xs).unwrap().unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&xs, &neg).unwrap().unwrap() + 1.0).abs() < 1e-15);
        assert!((spearman(&xs, &neg).unwrap().unwrap() + 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap().unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[0.0, 2.0]).unwrap(), None);
        assert_eq!(pearson(&[1.0], &[0.0]).unwrap(), None);
        assert!(pearson(&[1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn tied_ranks_are_averaged() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn average_precision_examples() {
        let ap = average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap().unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(average_precision(&[0.2, 0.9], &[false, true]).unwrap(), Some(1.0));
        assert_eq!(average_precision(&[0.5], &[true]).unwrap(), Some(1.0));
        assert_eq!(average_precision(&[0.5], &[false]).unwrap(), None);
        // ties resolve by input order
        assert_eq!(average_precision(&[0.5, 0.5], &[false, true]).unwrap(), Some(0.5));
    }

    #[test]
    fn average_precision_matches_cutpoint_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..500 {
            let n = rng.gen_range(1..=20);
            let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..6) as f64) / 5.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            labels[rng.gen_range(0..n)] = true;
            let ap = average_precision(&scores, &labels).unwrap().unwrap();
            assert!((ap - all_cutpoints_ap(&scores, &labels)).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn spearman_ignores_monotone_transforms(
            pairs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..30)
        ) {
            let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let tx: Vec<f64> = xs.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
            let ty: Vec<f64> = ys.iter().map(|v| v.powi(3)).collect();
            let a = spearman(&xs, &ys).unwrap();
            let b = spearman(&tx, &ty).unwrap();
            match (a, b) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }
        }
    }
}
