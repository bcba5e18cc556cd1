//! `synth-data`: a labelled synthetic corpus plus a transmembrane set.

use std::path::PathBuf;

use clap::Args;
use protembed::data::io::{
    region_labels_to_strings, ss_labels_to_strings, write_coords_tsv, write_fasta, write_labels_tsv,
    write_position_labels_tsv,
};
use protembed::data::{
    generate_synthetic_corpus, generate_synthetic_tm, labels_from_regions, Alphabet, ProteinRecord,
    SyntheticCorpusConfig, SyntheticTmConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Ctx, Outcome};
use crate::error::{CliError, CliResult};

/// Writes into `--out`: `train.fasta`, `heldout.fasta`, `labels.tsv`,
/// `coords.tsv`, `ss.tsv` (all records of both splits), plus `tm.fasta` and
/// `tm_regions.tsv` (per-position S/M/I/O/G letters).
#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub folds_per_class: Option<usize>,
    #[arg(long)]
    pub families_per_superfamily: Option<usize>,
    #[arg(long)]
    pub sequences_per_family: Option<usize>,
    /// Members of each family written to heldout.fasta instead of train.fasta.
    #[arg(long)]
    pub heldout_per_family: Option<usize>,
    /// Transmembrane-set proteins per topology category.
    #[arg(long)]
    pub tm_per_category: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub corpus: SyntheticCorpusConfig,
    pub tm: SyntheticTmConfig,
    pub heldout_per_family: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            corpus: SyntheticCorpusConfig::default(),
            tm: SyntheticTmConfig::default(),
            heldout_per_family: 2,
            seed: 0,
        }
    }
}

fn fasta(records: &[&ProteinRecord]) -> String {
    let a = Alphabet::standard();
    let items: Vec<(String, String)> = records.iter().map(|r| (r.id.clone(), a.decode(&r.tokens))).collect();
    write_fasta(&items)
}

pub fn run(args: &SynthArgs, ctx: &Ctx) -> CliResult<Outcome> {
    let mut cfg: SynthConfig = ctx.load_config()?;
    let c = &mut cfg.corpus;
    for (slot, flag) in [
        (&mut c.classes, args.classes),
        (&mut c.folds_per_class, args.folds_per_class),
        (&mut c.families_per_superfamily, args.families_per_superfamily),
        (&mut c.sequences_per_family, args.sequences_per_family),
        (&mut cfg.heldout_per_family, args.heldout_per_family),
        (&mut cfg.tm.per_category, args.tm_per_category),
    ] {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    cfg.seed = ctx.seed_or(cfg.seed);
    cfg.corpus.validate()?;
    let per_family = cfg.corpus.sequences_per_family;
    if cfg.heldout_per_family >= per_family {
        return Err(CliError::usage(format!(
            "heldout_per_family ({}) must be below sequences_per_family ({per_family})",
            cfg.heldout_per_family
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let corpus = generate_synthetic_corpus(&cfg.corpus, &mut rng)?;
    let tm = generate_synthetic_tm(&cfg.tm, &mut rng);
    let train_count = per_family - cfg.heldout_per_family;
    let mut train: Vec<&ProteinRecord> = Vec::new();
    let mut heldout: Vec<&ProteinRecord> = Vec::new();
    for (i, r) in corpus.iter().enumerate() {
        // records are emitted family by family
        if i % per_family < train_count {
            train.push(r);
        } else {
            heldout.push(r);
        }
    }

    let mut out = Outcome::new(&cfg, cfg.seed);
    let dir = &args.out;
    out.write(&dir.join("train.fasta"), fasta(&train))?;
    out.write(&dir.join("heldout.fasta"), fasta(&heldout))?;
    let labels: Vec<_> = corpus
        .iter()
        .filter_map(|r| r.label.clone().map(|l| (r.id.clone(), l)))
        .collect();
    out.write(&dir.join("labels.tsv"), write_labels_tsv(&labels))?;
    let coords: Vec<_> = corpus
        .iter()
        .filter_map(|r| r.coords.clone().map(|c| (r.id.clone(), c)))
        .collect();
    out.write(&dir.join("coords.tsv"), write_coords_tsv(&coords))?;
    let ss: Vec<_> = corpus
        .iter()
        .filter_map(|r| r.ss.as_ref().map(|s| (r.id.clone(), ss_labels_to_strings(s))))
        .collect();
    out.write(&dir.join("ss.tsv"), write_position_labels_tsv(&ss))?;
    out.write(&dir.join("tm.fasta"), fasta(&tm.iter().collect::<Vec<_>>()))?;
    let regions: Vec<_> = tm
        .iter()
        .filter_map(|r| {
            r.regions
                .as_ref()
                .map(|g| (r.id.clone(), region_labels_to_strings(&labels_from_regions(g))))
        })
        .collect();
    out.write(&dir.join("tm_regions.tsv"), write_position_labels_tsv(&regions))?;
    log::info!(
        "{} train, {} heldout, {} transmembrane records",
        train.len(),
        heldout.len(),
        tm.len()
    );
    Ok(out.manifest_in_dir(dir))
}
