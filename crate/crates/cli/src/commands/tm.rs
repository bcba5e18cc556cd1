//! `train-tm` and `eval-tm`: transmembrane topology tagging.

use std::fs;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use protembed::checkpoint::Checkpoint;
use protembed::data::{one_hot, DatasetPaths, ProteinRecord, Region};
use protembed::nn::Tensor;
use protembed::tm::scoring::{annotated_paths, tm_category_score, CategoryScore, TmPrediction};
use protembed::tm::{crossvalidate_tm, states_to_regions, train_tagger, Grammar, Tagger, TmConfig, TmReport};
use protembed::training::embed_all;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{load_model, load_records, num, sibling, Ctx, Outcome};
use crate::error::{io_context, CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TmFeatures {
    /// One-hot residues.
    Onehot,
    /// Per-position embeddings from --model.
    Embed,
}

impl TmFeatures {
    fn name(self) -> &'static str {
        match self {
            TmFeatures::Onehot => "onehot",
            TmFeatures::Embed => "embed",
        }
    }
}

/// Inputs shared by `train-tm` and `eval-tm`.
#[derive(Args, Debug)]
pub struct TmData {
    #[arg(long)]
    pub fasta: PathBuf,
    /// Per-position region letters: S (signal peptide), M (membrane helix),
    /// I (inside), O (outside), G (globular).
    #[arg(long)]
    pub regions: PathBuf,
    #[arg(long, value_enum)]
    pub features: Option<TmFeatures>,
    /// Embedding model for --features embed.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// State grammar TOML; default is the bundled 18-state grammar.
    #[arg(long)]
    pub grammar: Option<PathBuf>,
    /// biLSTM units per direction.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TmRunConfig {
    pub features: TmFeatures,
    pub folds: usize,
    pub tagger: TmConfig,
}

impl Default for TmRunConfig {
    fn default() -> Self {
        TmRunConfig {
            features: TmFeatures::Onehot,
            folds: 10,
            tagger: TmConfig::default(),
        }
    }
}

struct Loaded {
    cfg: TmRunConfig,
    records: Vec<ProteinRecord>,
    features: Vec<Tensor>,
    out: Outcome,
}

fn load(data: &TmData, ctx: &Ctx, folds: Option<usize>, fixed_features: Option<TmFeatures>) -> CliResult<Loaded> {
    let mut cfg: TmRunConfig = ctx.load_config()?;
    cfg.features = data.features.or(fixed_features).unwrap_or(cfg.features);
    if let (Some(a), Some(b)) = (data.features, fixed_features) {
        if a != b {
            return Err(CliError::usage(format!(
                "the tagger was trained on {} features, not {}",
                b.name(),
                a.name()
            )));
        }
    }
    cfg.folds = folds.unwrap_or(cfg.folds);
    let t = &mut cfg.tagger;
    t.hidden = data.hidden.unwrap_or(t.hidden);
    t.epochs = data.epochs.unwrap_or(t.epochs);
    t.batch_size = data.batch_size.unwrap_or(t.batch_size);
    t.adam.lr = data.lr.unwrap_or(t.adam.lr);
    t.seed = ctx.seed_or(t.seed);

    let mut out = Outcome::new(&cfg, cfg.tagger.seed);
    out.input(&data.fasta);
    out.input(&data.regions);
    let records = load_records(&DatasetPaths {
        fasta: Some(&data.fasta),
        tm: Some(&data.regions),
        ..Default::default()
    })?;
    let records: Vec<ProteinRecord> = records.into_iter().filter(|r| r.regions.is_some()).collect();
    if records.is_empty() {
        return Err(CliError::data("no sequence has a region annotation"));
    }
    let features = match cfg.features {
        TmFeatures::Onehot => records.par_iter().map(|r| one_hot(&r.tokens)).collect(),
        TmFeatures::Embed => {
            let p = data
                .model
                .as_ref()
                .ok_or_else(|| CliError::usage("--features embed needs --model"))?;
            out.input(p);
            embed_all(&load_model(p)?, &records)?
        }
    };
    Ok(Loaded {
        cfg,
        records,
        features,
        out,
    })
}

fn load_grammar(path: Option<&PathBuf>, out: &mut Outcome) -> CliResult<Grammar> {
    match path {
        None => Ok(Grammar::default_tm()),
        Some(p) => {
            out.input(p);
            Grammar::from_toml(&io_context(fs::read_to_string(p), p)?)
                .map_err(|e| CliError::data(format!("{}: {e}", p.display())))
        }
    }
}

/// Trains a tagger on every annotated record. Writes the checkpoint to
/// `--out` and per-epoch mean NLL to `<out>.loss.tsv`.
#[derive(Args, Debug)]
pub struct TrainTmArgs {
    #[command(flatten)]
    pub data: TmData,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn train_tm(args: &TrainTmArgs, ctx: &Ctx) -> CliResult<Outcome> {
    let Loaded {
        cfg,
        records,
        features,
        mut out,
    } = load(&args.data, ctx, None, None)?;
    let g = load_grammar(args.data.grammar.as_ref(), &mut out)?;
    let paths: Vec<Vec<usize>> = annotated_paths(&g, &records)?.into_iter().map(|(_, p)| p).collect();
    let (tagger, losses) = train_tagger(&g, &features, &paths, &cfg.tagger)?;
    out.write(&args.out, tagger.to_checkpoint(&g, cfg.features.name()).to_bytes())?;
    let mut tsv = String::from("epoch\tloss\n");
    for (e, l) in losses.iter().enumerate() {
        tsv.push_str(&format!("{}\t{}\n", e + 1, num(*l)));
    }
    out.write(&sibling(&args.out, ".loss.tsv"), tsv)?;
    Ok(out.manifest_beside(&args.out))
}

/// Per-category topology accuracy (TM, SP+TM, Globular, Globular+SP,
/// Overall). Runs stratified `--folds` cross-validation, or scores a trained
/// `--tagger` on the given records. Per-protein predictions go to
/// `<out>.predictions.tsv`.
#[derive(Args, Debug)]
pub struct EvalTmArgs {
    #[command(flatten)]
    pub data: TmData,
    #[arg(long, conflicts_with = "tagger")]
    pub folds: Option<usize>,
    /// Checkpoint from `train-tm`; its grammar and feature kind are used.
    #[arg(long, conflicts_with = "grammar")]
    pub tagger: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn region_string(regions: &[Region]) -> String {
    let parts: Vec<String> = regions
        .iter()
        .map(|r| format!("{}{}-{}", r.kind.letter(), r.start, r.end))
        .collect();
    parts.join(",")
}

pub fn eval_tm(args: &EvalTmArgs, ctx: &Ctx) -> CliResult<Outcome> {
    let trained = match &args.tagger {
        Some(p) => {
            let ck = Checkpoint::load(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
            let (t, g, source) =
                Tagger::from_checkpoint(&ck).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
            let kind = TmFeatures::from_str(&source, true)
                .map_err(|_| CliError::data(format!("{}: unknown feature kind {source:?}", p.display())))?;
            Some((t, g, kind, p.clone()))
        }
        None => None,
    };
    let Loaded {
        cfg,
        records,
        features,
        mut out,
    } = load(&args.data, ctx, args.folds, trained.as_ref().map(|t| t.2))?;

    let (report, preds): (TmReport, Vec<TmPrediction>) = match &trained {
        None => {
            let g = load_grammar(args.data.grammar.as_ref(), &mut out)?;
            crossvalidate_tm(&g, &records, &features, &cfg.tagger, cfg.folds)?
        }
        Some((tagger, g, _, path)) => {
            out.input(path);
            let truth = annotated_paths(g, &records)?;
            let preds = records
                .par_iter()
                .zip(&features)
                .zip(&truth)
                .map(|((r, x), (regions, _))| {
                    let predicted = states_to_regions(g, &tagger.decode(g, x)?);
                    let score = tm_category_score(&predicted, regions);
                    Ok(TmPrediction {
                        id: r.id.clone(),
                        fold: 0,
                        regions: predicted,
                        score,
                    })
                })
                .collect::<protembed::Result<Vec<_>>>()?;
            let scores: Vec<CategoryScore> = preds.iter().map(|p| p.score).collect();
            (TmReport::from_scores(&scores), preds)
        }
    };
    let mut tsv = String::from("id\tfold\tcategory\tcorrect\tpredicted_regions\n");
    for p in &preds {
        let fold = if trained.is_some() { "NA".to_string() } else { p.fold.to_string() };
        tsv.push_str(&format!(
            "{}\t{fold}\t{}\t{}\t{}\n",
            p.id,
            p.score.category.name(),
            p.score.correct as u8,
            region_string(&p.regions)
        ));
    }
    out.write(&args.out, report.tsv())?;
    out.write(&sibling(&args.out, ".predictions.tsv"), tsv)?;
    Ok(out.manifest_beside(&args.out))
}
