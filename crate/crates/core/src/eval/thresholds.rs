use serde::{Deserialize, Serialize};

use crate::data::sampling::NUM_LEVELS;
use crate::error::{Error, Result};

/// Four non-decreasing cut points; a score's level is `#{t : score ≥ c_t}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub cuts: [f64; NUM_LEVELS - 1],
}

impl ThresholdSet {
    pub fn level(&self, score: f64) -> u8 {
        self.cuts.iter().filter(|&&c| score >= c).count() as u8
    }
}

/// Distinct scores in ascending order with per-level counts.
fn groups(scores: &[f64], levels: &[u8]) -> (Vec<f64>, Vec<[usize; NUM_LEVELS]>) {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut values: Vec<f64> = Vec::new();
    let mut counts: Vec<[usize; NUM_LEVELS]> = Vec::new();
    for i in idx {
        if values.last() != Some(&scores[i]) {
            values.push(scores[i]);
            counts.push([0; NUM_LEVELS]);
        }
        counts.last_mut().expect("pushed above")[levels[i] as usize] += 1;
    }
    (values, counts)
}

/// Cut values for boundaries `b_t` = index of the first group at level ≥ t.
fn cuts_from_boundaries(values: &[f64], bounds: &[usize; NUM_LEVELS - 1]) -> [f64; NUM_LEVELS - 1] {
    let mut cuts = [0.0; NUM_LEVELS - 1];
    for (c, &b) in cuts.iter_mut().zip(bounds) {
        *c = if b == 0 {
            f64::NEG_INFINITY
        } else if b == values.len() {
            f64::INFINITY
        } else {
            values[b - 1] + (values[b] - values[b - 1]) / 2.0
        };
    }
    cuts
}

/// Monotone cut points maximizing calibration accuracy.
///
/// Cuts fall at midpoints between adjacent distinct scores, or at ±∞ when
/// a level takes no scores. Among optimal solutions the lexicographically
/// smallest cut vector is returned. Runs in `O(G·5)` after sorting, for `G`
/// distinct scores.
pub fn fit_thresholds(scores: &[f64], levels: &[u8]) -> Result<ThresholdSet> {
    if scores.is_empty() {
        return Err(Error::Empty("calibration scores"));
    }
    if scores.len() != levels.len() {
        return Err(Error::shape(format!("{} scores vs {} levels", scores.len(), levels.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("calibration score".into()));
    }
    if levels.iter().any(|&l| l as usize >= NUM_LEVELS) {
        return Err(Error::data("level outside 0..=4"));
    }
    let (values, counts) = groups(scores, levels);
    let g = values.len();
    // best[k][l]: most correct among groups k.. given every level there is ≥ l
    let mut best = vec![[0usize; NUM_LEVELS]; g + 1];
    for k in (0..g).rev() {
        let mut run = 0;
        for l in (0..NUM_LEVELS).rev() {
            run = run.max(counts[k][l] + best[k + 1][l]);
            best[k][l] = run;
        }
    }
    // Highest optimal level at each group gives the earliest boundaries.
    let mut assigned = Vec::with_capacity(g);
    let mut floor = 0;
    for k in 0..g {
        let target = best[k][floor];
        let l = (floor..NUM_LEVELS)
            .rev()
            .find(|&l| counts[k][l] + best[k + 1][l] == target)
            .expect("optimum is attained");
        assigned.push(l);
        floor = l;
    }
    let mut bounds = [g; NUM_LEVELS - 1];
    for (t, b) in bounds.iter_mut().enumerate() {
        if let Some(k) = assigned.iter().position(|&l| l > t) {
            *b = k;
        }
    }
    Ok(ThresholdSet {
        cuts: cuts_from_boundaries(&values, &bounds),
    })
}

pub fn accuracy_with(thresholds: &ThresholdSet, scores: &[f64], levels: &[u8]) -> f64 {
    let hits = scores
        .iter()
        .zip(levels)
        .filter(|(&s, &l)| thresholds.level(s) == l)
        .count();
    hits as f64 / scores.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Every monotone boundary vector, scored by direct counting; ties go
    /// to the lexicographically smallest cut vector.
    fn brute_force(scores: &[f64], levels: &[u8]) -> (f64, [f64; 4]) {
        let (values, _) = groups(scores, levels);
        let g = values.len();
        let mut best: Option<(f64, [f64; 4])> = None;
        for b1 in 0..=g {
            for b2 in b1..=g {
                for b3 in b2..=g {
                    for b4 in b3..=g {
                        let cuts = cuts_from_boundaries(&values, &[b1, b2, b3, b4]);
                        let acc = accuracy_with(&ThresholdSet { cuts }, scores, levels);
                        let better = match &best {
                            None => true,
                            Some((a, c)) => acc > *a || (acc == *a && cuts.partial_cmp(c) == Some(std::cmp::Ordering::Less)),
                        };
                        if better {
                            best = Some((acc, cuts));
                        }
                    }
                }
            }
        }
        best.expect("at least one candidate")
    }

    #[test]
    fn separated_levels_are_recovered() {
        let scores = [-4.0, -3.5, -2.0, -1.9, -1.0, -0.6, -0.2, -0.1];
        let levels = [0, 0, 1, 1, 3, 3, 4, 4];
        let t = fit_thresholds(&scores, &levels).unwrap();
        assert_eq!(accuracy_with(&t, &scores, &levels), 1.0);
        assert!(t.cuts.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn constant_scores_pick_the_modal_level() {
        let scores = [1.0; 5];
        let levels = [2, 2, 0, 4, 2];
        let t = fit_thresholds(&scores, &levels).unwrap();
        assert_eq!(t.level(1.0), 2);
        assert!((accuracy_with(&t, &scores, &levels) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn six_point_hand_case() {
        // ascending scores with one inversion between levels 1 and 2
        let scores = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let levels = [0, 1, 2, 1, 2, 4];
        let t = fit_thresholds(&scores, &levels).unwrap();
        let (acc, cuts) = brute_force(&scores, &levels);
        assert_eq!(t.cuts, cuts);
        assert!((acc - 5.0 / 6.0).abs() < 1e-15);
        assert!((accuracy_with(&t, &scores, &levels) - acc).abs() < 1e-15);
    }

    #[test]
    fn matches_brute_force_on_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..300 {
            let n = rng.gen_range(1..9);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64 * 0.5).collect();
            let levels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..5)).collect();
            let t = fit_thresholds(&scores, &levels).unwrap();
            let (acc, cuts) = brute_force(&scores, &levels);
            assert_eq!(t.cuts, cuts, "{scores:?} {levels:?}");
            assert_eq!(accuracy_with(&t, &scores, &levels), acc);
        }
    }

    #[test]
    fn never_worse_than_fixed_thresholds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.gen_range(5..40);
            let levels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..5)).collect();
            let scores: Vec<f64> = levels.iter().map(|&l| l as f64 + rng.gen_range(-1.5..1.5)).collect();
            let fitted = accuracy_with(&fit_thresholds(&scores, &levels).unwrap(), &scores, &levels);
            let mut fixed = [rng.gen_range(-1.0..5.0), 0.0, 0.0, 0.0];
            for k in 1..4 {
                fixed[k] = fixed[k - 1] + rng.gen_range(0.0..1.5);
            }
            assert!(fitted >= accuracy_with(&ThresholdSet { cuts: fixed }, &scores, &levels));
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_thresholds(&[], &[]).is_err());
        assert!(fit_thresholds(&[0.0], &[5]).is_err());
        assert!(fit_thresholds(&[f64::NAN], &[1]).is_err());
    }
}
