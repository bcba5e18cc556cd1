//! `train`: multitask training of the embedding model.

use std::path::PathBuf;

use clap::Args;
use protembed::checkpoint::Checkpoint;
use protembed::data::DatasetPaths;
use protembed::encoder::Architecture;
use protembed::lm::LanguageModel;
use protembed::similarity::Scorer;
use protembed::training::{all_pairs, train, TrainConfig, TrainInputs};
use serde_json::Value;

use super::{load_records, parse_scorer, Ctx, Outcome};
use crate::error::{io_context, CliError, CliResult};

/// Writes into `--out`: `model.ckpt`, `epoch_NNN.ckpt` after every epoch,
/// `steps.tsv` (per-step losses) and `epochs.tsv` (heldout validation per
/// epoch, epoch 0 before training; only with `--heldout`).
#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training sequences.
    #[arg(long)]
    pub train: PathBuf,
    /// Hierarchy labels for training and heldout ids.
    #[arg(long)]
    pub labels: PathBuf,
    /// Cα coordinates; required unless --lambda 1.
    #[arg(long)]
    pub coords: Option<PathBuf>,
    /// Sequences for per-epoch validation.
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    /// Pretrained language-model checkpoint; without it the encoder sees
    /// only one-hot residues.
    #[arg(long)]
    pub lm: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// linear, fc, bilstm1 or bilstm3.
    #[arg(long, value_parser = parse_arch)]
    pub arch: Option<Architecture>,
    /// Scorer trained against the ordinal head: ssa, ua or me.
    #[arg(long, value_parser = parse_scorer)]
    pub scorer: Option<Scorer>,
    /// Weight of the similarity loss; 1 - lambda goes to contacts.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Pair draws per epoch.
    #[arg(long)]
    pub epoch_size: Option<usize>,
    #[arg(long)]
    pub pair_batch: Option<usize>,
    #[arg(long)]
    pub contact_batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Encoder LSTM units per direction (or fc hidden width).
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Embedding dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Width of the input fusion layer.
    #[arg(long)]
    pub fusion: Option<usize>,
    #[arg(long)]
    pub contact_hidden: Option<usize>,
    /// Exponent smoothing the level distribution of sampled pairs.
    #[arg(long)]
    pub smoothing: Option<f64>,
    /// Per-residue resampling probability.
    #[arg(long)]
    pub perturbation: Option<f64>,
    /// Smallest |i-j| entering the contact loss.
    #[arg(long)]
    pub min_separation: Option<usize>,
}

pub fn parse_arch(s: &str) -> Result<Architecture, String> {
    serde_json::from_value(Value::String(s.to_ascii_lowercase()))
        .map_err(|_| format!("unknown architecture {s:?} (linear, fc, bilstm1, bilstm3)"))
}

pub fn run(args: &TrainArgs, ctx: &Ctx) -> CliResult<Outcome> {
    let mut cfg: TrainConfig = ctx.load_config()?;
    macro_rules! set {
        ($($field:expr => $flag:expr),* $(,)?) => {
            $(if let Some(v) = $flag { $field = v; })*
        };
    }
    set! {
        cfg.encoder.arch => args.arch,
        cfg.scorer => args.scorer,
        cfg.lambda => args.lambda,
        cfg.epochs => args.epochs,
        cfg.epoch_size => args.epoch_size,
        cfg.pair_batch => args.pair_batch,
        cfg.contact_batch => args.contact_batch,
        cfg.adam.lr => args.lr,
        cfg.encoder.hidden => args.hidden,
        cfg.encoder.dim => args.dim,
        cfg.encoder.fusion => args.fusion,
        cfg.contact_hidden => args.contact_hidden,
        cfg.smoothing => args.smoothing,
        cfg.perturbation => args.perturbation,
        cfg.min_separation => args.min_separation,
    }
    cfg.seed = ctx.seed_or(cfg.seed);
    cfg.encoder.use_lm = args.lm.is_some();
    cfg.validate()?;
    if cfg.lambda < 1.0 && args.coords.is_none() {
        return Err(CliError::usage("contact supervision (lambda < 1) needs --coords"));
    }

    let lm = match &args.lm {
        Some(p) => {
            let ck = Checkpoint::load(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
            Some(LanguageModel::from_checkpoint(&ck).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    let side = |fasta| DatasetPaths {
        fasta: Some(fasta),
        labels: Some(&args.labels),
        coords: args.coords.as_deref(),
        ..Default::default()
    };
    let train_records = load_records(&side(&args.train))?;
    let heldout = match &args.heldout {
        Some(p) => {
            let recs = load_records(&side(p))?;
            let pairs = all_pairs(&recs)?;
            Some((recs, pairs))
        }
        None => None,
    };

    io_context(std::fs::create_dir_all(&args.out), &args.out)?;
    let inputs = TrainInputs {
        train: &train_records,
        heldout: heldout.as_ref().map(|(r, p)| (r.as_slice(), p.as_slice())),
        checkpoint_dir: Some(&args.out),
    };
    let (model, log) = train(&inputs, &cfg, lm)?;

    let mut out = Outcome::new(&cfg, cfg.seed);
    out.input(&args.train);
    out.input(&args.labels);
    out.input_opt(args.coords.as_ref());
    out.input_opt(args.heldout.as_ref());
    out.input_opt(args.lm.as_ref());
    for e in 1..=cfg.epochs {
        out.outputs.push(args.out.join(format!("epoch_{e:03}.ckpt")));
    }
    out.write(&args.out.join("model.ckpt"), model.to_checkpoint().to_bytes())?;
    out.write(&args.out.join("steps.tsv"), log.steps_tsv())?;
    if heldout.is_some() {
        out.write(&args.out.join("epochs.tsv"), log.epochs_tsv())?;
    }
    Ok(out.manifest_in_dir(&args.out))
}
