//! `pretrain-lm`: fits the bidirectional language model on a FASTA corpus.

use std::path::PathBuf;

use clap::Args;
use protembed::data::{DatasetPaths, Token};
use protembed::lm::{pretrain_lm, LmConfig};

use super::{load_records, num, sibling, Ctx, Outcome};
use crate::error::CliResult;

/// Writes the checkpoint to `--out` and per-epoch corpus loss (mean of the
/// summed forward and reverse NLL per position; epoch 0 is before training)
/// to `<out>.loss.tsv`.
#[derive(Args, Debug)]
pub struct LmArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// LSTM units per layer.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

pub fn run(args: &LmArgs, ctx: &Ctx) -> CliResult<Outcome> {
    let mut cfg: LmConfig = ctx.load_config()?;
    cfg.hidden = args.hidden.unwrap_or(cfg.hidden);
    cfg.layers = args.layers.unwrap_or(cfg.layers);
    cfg.epochs = args.epochs.unwrap_or(cfg.epochs);
    cfg.batch_size = args.batch_size.unwrap_or(cfg.batch_size);
    cfg.adam.lr = args.lr.unwrap_or(cfg.adam.lr);
    cfg.seed = ctx.seed_or(cfg.seed);

    let records = load_records(&DatasetPaths {
        fasta: Some(&args.corpus),
        ..Default::default()
    })?;
    let corpus: Vec<Vec<Token>> = records.into_iter().map(|r| r.tokens).collect();
    let (model, log) = pretrain_lm(&corpus, &cfg)?;

    let mut out = Outcome::new(&cfg, cfg.seed);
    out.input(&args.corpus);
    out.write(&args.out, model.to_checkpoint().to_bytes())?;
    let mut tsv = String::from("epoch\tloss\n");
    for (e, l) in std::iter::once(log.initial_loss).chain(log.epoch_losses).enumerate() {
        tsv.push_str(&format!("{e}\t{}\n", num(l)));
    }
    out.write(&sibling(&args.out, ".loss.tsv"), tsv)?;
    Ok(out.manifest_beside(&args.out))
}
