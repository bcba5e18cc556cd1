use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::crf::{constrained_path, states_to_regions};
use super::grammar::Grammar;
use super::tagger::{train_tagger, TmConfig};
use crate::data::{labels_from_regions, ProteinRecord, Region, RegionKind, TmCategory};
use crate::error::{Error, Result};
use crate::eval::report::fmt_opt;
use crate::nn::Tensor;

/// Minimum overlap for a predicted helix to count as matching a true one.
pub const MIN_OVERLAP: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub category: TmCategory,
    pub correct: bool,
}

fn of_kind(regions: &[Region], kind: RegionKind) -> Vec<&Region> {
    regions.iter().filter(|r| r.kind == kind).collect()
}

/// Same number of helices, and each true helix overlaps a distinct predicted
/// one by at least [`MIN_OVERLAP`] positions (greedy, left to right).
fn helices_match(predicted: &[&Region], truth: &[&Region]) -> bool {
    if predicted.len() != truth.len() {
        return false;
    }
    let mut used = vec![false; predicted.len()];
    truth.iter().all(|t| {
        match (0..predicted.len()).find(|&p| !used[p] && predicted[p].overlap(t) >= MIN_OVERLAP) {
            Some(p) => {
                used[p] = true;
                true
            }
            None => false,
        }
    })
}

/// Scores a predicted topology against the annotation, under the rules of
/// the annotation's category.
pub fn tm_category_score(predicted: &[Region], truth: &[Region]) -> CategoryScore {
    let category = TmCategory::of_regions(truth);
    let sps = of_kind(predicted, RegionKind::SignalPeptide);
    let leading_sp = sps.len() == 1 && predicted.first().is_some_and(|r| r.kind == RegionKind::SignalPeptide);
    let pred_tm = of_kind(predicted, RegionKind::Transmembrane);
    let true_tm = of_kind(truth, RegionKind::Transmembrane);
    let correct = match category {
        TmCategory::Tm => sps.is_empty() && helices_match(&pred_tm, &true_tm),
        TmCategory::SpTm => leading_sp && helices_match(&pred_tm, &true_tm),
        TmCategory::Globular => sps.is_empty() && pred_tm.is_empty(),
        TmCategory::GlobularSp => leading_sp && pred_tm.is_empty(),
    };
    CategoryScore { category, correct }
}

/// Fold index per record, stratified by category and reproducible for a
/// given seed.
pub fn stratified_folds(categories: &[TmCategory], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0; categories.len()];
    let mut next = 0;
    for cat in TmCategory::ALL {
        let mut members: Vec<usize> = (0..categories.len()).filter(|&i| categories[i] == cat).collect();
        members.shuffle(&mut rng);
        for i in members {
            out[i] = next % folds;
            next += 1;
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TmReport {
    /// `(proteins, correct)` per category, in [`TmCategory::ALL`] order.
    pub counts: [(usize, usize); 4],
}

impl TmReport {
    pub fn from_scores(scores: &[CategoryScore]) -> Self {
        let mut r = TmReport::default();
        for s in scores {
            let k = TmCategory::ALL.iter().position(|&c| c == s.category).expect("known category");
            r.counts[k].0 += 1;
            r.counts[k].1 += s.correct as usize;
        }
        r
    }

    pub fn accuracy(&self, category: TmCategory) -> Option<f64> {
        let k = TmCategory::ALL.iter().position(|&c| c == category).expect("known category");
        let (n, c) = self.counts[k];
        (n > 0).then(|| c as f64 / n as f64)
    }

    pub fn overall(&self) -> Option<f64> {
        let n: usize = self.counts.iter().map(|c| c.0).sum();
        let c: usize = self.counts.iter().map(|c| c.1).sum();
        (n > 0).then(|| c as f64 / n as f64)
    }

    pub fn tsv(&self) -> String {
        let header: Vec<&str> = TmCategory::ALL.iter().map(|c| c.name()).chain(["Overall"]).collect();
        let row: Vec<String> = TmCategory::ALL
            .iter()
            .map(|&c| fmt_opt(self.accuracy(c)))
            .chain([fmt_opt(self.overall())])
            .collect();
        format!("{}\n{}\n", header.join("\t"), row.join("\t"))
    }
}

/// Region annotation and its grammar state path for each record.
pub fn annotated_paths(g: &Grammar, records: &[ProteinRecord]) -> Result<Vec<(Vec<Region>, Vec<usize>)>> {
    records
        .iter()
        .map(|r| {
            let regions = r
                .regions
                .clone()
                .ok_or_else(|| Error::data(format!("record {} has no region annotation", r.id)))?;
            let labels = labels_from_regions(&regions);
            if labels.len() != r.len() {
                return Err(Error::data(format!("record {}: annotation length differs from sequence", r.id)));
            }
            let path = constrained_path(g, &labels).map_err(|e| Error::data(format!("record {}: {e}", r.id)))?;
            Ok((regions, path))
        })
        .collect()
}

/// Per-record prediction from cross-validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TmPrediction {
    pub id: String,
    pub fold: usize,
    pub regions: Vec<Region>,
    pub score: CategoryScore,
}

/// Stratified k-fold cross-validation: a tagger is trained on the other
/// folds (seeded by `config.seed + fold`) and decodes the held-out fold.
pub fn crossvalidate_tm(
    g: &Grammar,
    records: &[ProteinRecord],
    features: &[Tensor],
    config: &TmConfig,
    folds: usize,
) -> Result<(TmReport, Vec<TmPrediction>)> {
    if records.len() != features.len() {
        return Err(Error::shape("records and feature matrices differ in count"));
    }
    if folds < 2 || folds > records.len() {
        return Err(Error::Config(format!("need 2 <= folds <= {} records, got {folds}", records.len())));
    }
    let annotated = annotated_paths(g, records)?;
    let categories: Vec<TmCategory> = annotated.iter().map(|(r, _)| TmCategory::of_regions(r)).collect();
    let assignment = stratified_folds(&categories, folds, config.seed);
    let per_fold: Vec<Vec<(usize, TmPrediction)>> = (0..folds)
        .into_par_iter()
        .map(|fold| {
            let train: Vec<usize> = (0..records.len()).filter(|&i| assignment[i] != fold).collect();
            let xs: Vec<Tensor> = train.iter().map(|&i| features[i].clone()).collect();
            let ps: Vec<Vec<usize>> = train.iter().map(|&i| annotated[i].1.clone()).collect();
            let fold_config = TmConfig {
                seed: config.seed.wrapping_add(fold as u64),
                ..config.clone()
            };
            let (tagger, _) = train_tagger(g, &xs, &ps, &fold_config)?;
            (0..records.len())
                .filter(|&i| assignment[i] == fold)
                .map(|i| {
                    let path = tagger.decode(g, &features[i])?;
                    let regions = states_to_regions(g, &path);
                    let score = tm_category_score(&regions, &annotated[i].0);
                    Ok((
                        i,
                        TmPrediction {
                            id: records[i].id.clone(),
                            fold,
                            regions,
                            score,
                        },
                    ))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut preds: Vec<(usize, TmPrediction)> = per_fold.into_iter().flatten().collect();
    preds.sort_by_key(|p| p.0);
    let preds: Vec<TmPrediction> = preds.into_iter().map(|p| p.1).collect();
    let scores: Vec<CategoryScore> = preds.iter().map(|p| p.score).collect();
    Ok((TmReport::from_scores(&scores), preds))
}
