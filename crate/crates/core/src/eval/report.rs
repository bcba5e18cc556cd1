use serde::{Deserialize, Serialize};

use super::metrics::{average_precision, pearson, spearman};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pairs: usize,
    pub accuracy: f64,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    /// AP for retrieving pairs sharing at least class, fold, superfamily,
    /// family (levels ≥ 1..4).
    pub average_precision: [Option<f64>; 4],
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

impl EvalReport {
    pub const TSV_HEADER: &'static str = "pairs\taccuracy\tpearson\tspearman\tap_class\tap_fold\tap_superfamily\tap_family";

    pub fn tsv_row(&self) -> String {
        let mut cols = vec![
            self.pairs.to_string(),
            self.accuracy.to_string(),
            fmt_opt(self.pearson),
            fmt_opt(self.spearman),
        ];
        cols.extend(self.average_precision.iter().map(|&v| fmt_opt(v)));
        cols.join("\t")
    }
}

/// Accuracy of `predicted` against `truth`; correlations and per-level AP
/// of `scores` against `truth`.
pub fn evaluate_pairs(scores: &[f64], predicted: &[u8], truth: &[u8]) -> Result<EvalReport> {
    if scores.is_empty() {
        return Err(Error::Empty("evaluation pairs"));
    }
    if scores.len() != predicted.len() || scores.len() != truth.len() {
        return Err(Error::shape("scores, predictions and labels differ in length"));
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    let levels: Vec<f64> = truth.iter().map(|&t| t as f64).collect();
    let mut ap = [None; 4];
    for (t, slot) in ap.iter_mut().enumerate() {
        let labels: Vec<bool> = truth.iter().map(|&y| y as usize > t).collect();
        *slot = average_precision(scores, &labels)?;
    }
    Ok(EvalReport {
        pairs: scores.len(),
        accuracy: hits as f64 / scores.len() as f64,
        pearson: pearson(scores, &levels)?,
        spearman: spearman(scores, &levels)?,
        average_precision: ap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn oracle_and_anti_oracle() {
        let truth: Vec<u8> = vec![0, 1, 2, 3, 4, 0, 4, 2];
        let s: Vec<f64> = truth.iter().map(|&t| t as f64).collect();
        let r = evaluate_pairs(&s, &truth, &truth).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!((r.spearman.unwrap() - 1.0).abs() < 1e-12);
        assert!(r.average_precision.iter().all(|&a| a == Some(1.0)));
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let r = evaluate_pairs(&neg, &truth, &truth).unwrap();
        assert!((r.spearman.unwrap() + 1.0).abs() < 1e-12);
        assert!(evaluate_pairs(&[], &[], &[]).is_err());
    }

    #[test]
    fn random_scores_give_prevalence_ap() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 20_000;
        let truth: Vec<u8> = (0..n).map(|_| rng.gen_range(0..5)).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let r = evaluate_pairs(&scores, &truth, &truth).unwrap();
        for t in 0..4 {
            let prevalence = truth.iter().filter(|&&y| y as usize > t).count() as f64 / n as f64;
            assert!((r.average_precision[t].unwrap() - prevalence).abs() < 0.02);
        }
    }

    #[test]
    fn tsv_row_has_header_arity() {
        let r = evaluate_pairs(&[0.1, 0.2], &[0, 0], &[0, 0]).unwrap();
        assert_eq!(r.tsv_row().split('\t').count(), EvalReport::TSV_HEADER.split('\t').count());
        assert!(r.tsv_row().contains("NA"));
    }
}
