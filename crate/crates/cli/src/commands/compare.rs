//! `embed` and `compare`.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use protembed::data::{write_embeddings, DatasetPaths, ProteinRecord};
use protembed::eval::nw::nw_align_score;
use protembed::nn::Tensor;
use protembed::similarity::{ordinal_probabilities, Scorer};
use protembed::training::{embed_all, Model};
use rayon::prelude::*;
use serde::Serialize;

use super::{load_model, load_records, num, Ctx, Outcome};
use crate::error::{CliError, CliResult};

/// Writes per-position embeddings: for each record a `>id` line, then one
/// line of D tab-separated reals per residue.
#[derive(Args, Debug, Serialize)]
pub struct EmbedArgs {
    #[arg(long)]
    pub fasta: PathBuf,
    /// Model checkpoint from `train` (includes its language model).
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn embed(args: &EmbedArgs, ctx: &Ctx) -> CliResult<Outcome> {
    let model = load_model(&args.model)?;
    let records = load_records(&DatasetPaths {
        fasta: Some(&args.fasta),
        ..Default::default()
    })?;
    let z = embed_all(&model, &records)?;
    let items: Vec<(String, Tensor)> = records.into_iter().map(|r| r.id).zip(z).collect();
    let mut out = Outcome::new(args, ctx.seed.unwrap_or(0));
    out.input(&args.fasta);
    out.input(&args.model);
    out.write(&args.out, write_embeddings(&items))?;
    Ok(out.manifest_beside(&args.out))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CompareScorer {
    Ssa,
    Ua,
    Me,
    /// Needleman-Wunsch, BLOSUM62, gap open -11 / extend -1.
    Nw,
}

impl CompareScorer {
    pub fn model_scorer(self) -> Option<Scorer> {
        match self {
            CompareScorer::Ssa => Some(Scorer::Ssa),
            CompareScorer::Ua => Some(Scorer::Ua),
            CompareScorer::Me => Some(Scorer::Me),
            CompareScorer::Nw => None,
        }
    }
}

/// Scores sequence pairs. Output columns: `idA idB score predicted_level
/// p_ge_1 p_ge_2 p_ge_3 p_ge_4`. Level and probabilities come from the
/// model's ordinal head and are `NA` unless `--scorer` is the scorer the
/// model was trained with.
#[derive(Args, Debug, Serialize)]
pub struct CompareArgs {
    #[arg(long)]
    pub a: PathBuf,
    /// Second FASTA: every record of --a against every record of --b.
    #[arg(long, conflicts_with = "all_pairs")]
    pub b: Option<PathBuf>,
    /// Every unordered pair within --a.
    #[arg(long)]
    pub all_pairs: bool,
    /// Model checkpoint; not needed for --scorer nw.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = CompareScorer::Ssa)]
    pub scorer: CompareScorer,
    #[arg(long)]
    pub out: PathBuf,
}

/// Raw scores of `(i, j)` index pairs into `a` and `b`.
pub fn score_index_pairs(
    scorer: CompareScorer,
    model: Option<&Model>,
    a: &[ProteinRecord],
    b: &[ProteinRecord],
    pairs: &[(usize, usize)],
) -> CliResult<Vec<f64>> {
    match (scorer.model_scorer(), model) {
        (None, _) => pairs
            .par_iter()
            .map(|&(i, j)| Ok(nw_align_score(&a[i].tokens, &b[j].tokens)? as f64))
            .collect(),
        (Some(s), Some(m)) => {
            let za = embed_all(m, a)?;
            let zb = embed_all(m, b)?;
            Ok(pairs
                .par_iter()
                .map(|&(i, j)| s.score(&za[i], &zb[j]))
                .collect::<protembed::Result<_>>()?)
        }
        (Some(_), None) => Err(CliError::usage(format!("--scorer {scorer:?} needs --model").to_lowercase())),
    }
}

pub fn compare(args: &CompareArgs, ctx: &Ctx) -> CliResult<Outcome> {
    if args.b.is_none() && !args.all_pairs {
        return Err(CliError::usage("give --b or --all-pairs"));
    }
    let model = args.model.as_deref().map(load_model).transpose()?;
    let read = |p| {
        load_records(&DatasetPaths {
            fasta: Some(p),
            ..Default::default()
        })
    };
    let a = read(&args.a)?;
    let b = args.b.as_deref().map(read).transpose()?;
    let pairs: Vec<(usize, usize)> = match &b {
        Some(b) => (0..a.len()).flat_map(|i| (0..b.len()).map(move |j| (i, j))).collect(),
        None => (0..a.len()).flat_map(|i| (i + 1..a.len()).map(move |j| (i, j))).collect(),
    };
    let b = b.as_deref().unwrap_or(&a);
    let scores = score_index_pairs(args.scorer, model.as_ref(), &a, b, &pairs)?;
    let head = model
        .as_ref()
        .filter(|m| Some(m.scorer) == args.scorer.model_scorer())
        .map(|m| m.params.ordinal.coefficients());

    let mut tsv = String::from("idA\tidB\tscore\tpredicted_level\tp_ge_1\tp_ge_2\tp_ge_3\tp_ge_4\n");
    for (&(i, j), &s) in pairs.iter().zip(&scores) {
        let tail = match &head {
            Some(c) => {
                let p = ordinal_probabilities(s, c);
                let level = protembed::similarity::predict_level(s, c);
                let probs: Vec<String> = p.at_least.iter().map(|&v| num(v)).collect();
                format!("{level}\t{}", probs.join("\t"))
            }
            None => "NA\tNA\tNA\tNA\tNA".to_string(),
        };
        tsv.push_str(&format!("{}\t{}\t{}\t{tail}\n", a[i].id, b[j].id, num(s)));
    }
    let mut out = Outcome::new(args, ctx.seed.unwrap_or(0));
    out.input(&args.a);
    out.input_opt(args.b.as_ref());
    out.input_opt(args.model.as_ref());
    out.write(&args.out, tsv)?;
    Ok(out.manifest_beside(&args.out))
}
