//! `protembed`: data synthesis, language-model pretraining, multitask
//! training, embedding, comparison and evaluation from one binary.
//!
//! Every run writes a JSON manifest (resolved configuration, seed, input
//! digests, version, timestamps) next to its outputs. Exit codes: 0 success,
//! 2 usage, 3 bad input data, 4 numerical or check failure.

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::{compare, eval, gradcheck, lm, synth, tm, train, Ctx, Outcome};
use error::{CliError, CliResult};
use manifest::{digests, now, RunManifest, VERSION};

#[derive(Parser, Debug)]
#[command(name = "protembed", version = VERSION, arg_required_else_help = true)]
#[command(about = "Structure-aware protein sequence embeddings")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Random seed; overrides the configuration file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Threads for parallel phases (pair scoring, embedding, CV folds).
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// TOML file with the subcommand's configuration; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Where to write the run manifest instead of the default location.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic hierarchical corpus and transmembrane set.
    SynthData(synth::SynthArgs),
    /// Pretrain the bidirectional language model.
    PretrainLm(lm::LmArgs),
    /// Train the embedding model with similarity and contact supervision.
    Train(train::TrainArgs),
    /// Write per-position embeddings.
    Embed(compare::EmbedArgs),
    /// Score sequence pairs.
    Compare(compare::CompareArgs),
    /// Pair-level structural similarity evaluation.
    EvalScop(eval::ScopArgs),
    /// Contact prediction metrics.
    EvalContacts(eval::ContactArgs),
    /// Secondary-structure probe on embeddings or k-mer features.
    ProbeSs(eval::ProbeArgs),
    /// Train a transmembrane topology tagger.
    TrainTm(tm::TrainTmArgs),
    /// Evaluate transmembrane topology prediction.
    EvalTm(tm::EvalTmArgs),
    /// Finite-difference gradient checks.
    GradCheck(gradcheck::GradCheckArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SynthData(_) => "synth-data",
            Command::PretrainLm(_) => "pretrain-lm",
            Command::Train(_) => "train",
            Command::Embed(_) => "embed",
            Command::Compare(_) => "compare",
            Command::EvalScop(_) => "eval-scop",
            Command::EvalContacts(_) => "eval-contacts",
            Command::ProbeSs(_) => "probe-ss",
            Command::TrainTm(_) => "train-tm",
            Command::EvalTm(_) => "eval-tm",
            Command::GradCheck(_) => "grad-check",
        }
    }

    fn run(&self, ctx: &Ctx) -> CliResult<Option<Outcome>> {
        Ok(Some(match self {
            Command::SynthData(a) => synth::run(a, ctx)?,
            Command::PretrainLm(a) => lm::run(a, ctx)?,
            Command::Train(a) => train::run(a, ctx)?,
            Command::Embed(a) => compare::embed(a, ctx)?,
            Command::Compare(a) => compare::compare(a, ctx)?,
            Command::EvalScop(a) => eval::eval_scop(a, ctx)?,
            Command::EvalContacts(a) => eval::eval_contacts(a, ctx)?,
            Command::ProbeSs(a) => eval::probe_ss(a, ctx)?,
            Command::TrainTm(a) => tm::train_tm(a, ctx)?,
            Command::EvalTm(a) => tm::eval_tm(a, ctx)?,
            Command::GradCheck(a) => return gradcheck::run(a, ctx),
        }))
    }
}

fn run(cli: Cli) -> CliResult<Option<CliError>> {
    let g = &cli.global;
    if g.workers == 0 {
        return Err(CliError::usage("--workers must be >= 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(g.workers)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let started = now();
    let ctx = Ctx {
        seed: g.seed,
        config: g.config.clone(),
    };
    let Some(mut outcome) = cli.command.run(&ctx)? else {
        return Ok(None);
    };
    if let Some(c) = &g.config {
        outcome.inputs.push(c.clone());
    }
    let manifest = RunManifest {
        subcommand: cli.command.name().to_string(),
        version: VERSION,
        seed: outcome.seed,
        workers: g.workers,
        config: outcome.config,
        inputs: digests(&outcome.inputs)?,
        outputs: outcome.outputs.iter().map(|p| p.display().to_string()).collect(),
        started,
        finished: now(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    match g.manifest.clone().or(outcome.manifest) {
        Some(p) => error::io_context(std::fs::write(&p, json), &p)?,
        None => eprint!("{json}"),
    }
    Ok(outcome.failure)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(None) => 0,
        Ok(Some(e)) | Err(e) => {
            eprintln!("protembed: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
