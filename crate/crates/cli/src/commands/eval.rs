//! `eval-scop`, `eval-contacts` and `probe-ss`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use protembed::contact::{contact_metrics, mean_metrics, EVAL_SEPARATIONS};
use protembed::data::io::{parse_coords_tsv, parse_position_labels_tsv, CONTACT_THRESHOLD};
use protembed::data::record::ss_class_from_str;
use protembed::data::{contacts_from_coordinates, hierarchy_level, parse_embeddings, ContactMap, DatasetPaths};
use protembed::eval::probe::{kmer_features, ss_probe, ProbeConfig};
use protembed::eval::report::{evaluate_pairs, EvalReport};
use protembed::eval::thresholds::fit_thresholds;
use protembed::nn::Tensor;
use protembed::training::{all_pairs, embed_all};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::compare::{score_index_pairs, CompareScorer};
use super::{load_model, load_records, num, sibling, Ctx, Outcome};
use crate::error::{io_context, CliError, CliResult};

/// Pair-level evaluation: accuracy of the predicted shared level, Pearson
/// and Spearman correlation of score with level, and average precision for
/// retrieving pairs that share class, fold, superfamily and family.
///
/// Levels come from fitted thresholds when `--calibration` is given (also
/// written to `<out>.thresholds.tsv`), otherwise from the model's ordinal
/// head, which requires `--scorer` to match the scorer it was trained with.
#[derive(Args, Debug, Serialize)]
pub struct ScopArgs {
    #[arg(long)]
    pub fasta: PathBuf,
    /// Hierarchy labels for --fasta and --calibration ids.
    #[arg(long)]
    pub labels: PathBuf,
    /// `idA<TAB>idB` rows; default is every unordered pair in --fasta.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = CompareScorer::Ssa)]
    pub scorer: CompareScorer,
    /// Sequences whose all-pairs scores calibrate level thresholds.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn read_pairs(path: &Path, index: &HashMap<&str, usize>) -> CliResult<Vec<(usize, usize)>> {
    let text = io_context(fs::read_to_string(path), path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: String| CliError::data(format!("{}:{}: {m}", path.display(), n + 1));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 2 {
            return Err(bad(format!("expected 2 fields, found {}", f.len())));
        }
        let id = |s: &str| index.get(s).copied().ok_or_else(|| bad(format!("unknown id {s:?}")));
        out.push((id(f[0])?, id(f[1])?));
    }
    Ok(out)
}

pub fn eval_scop(args: &ScopArgs, ctx: &Ctx) -> CliResult<Outcome> {
    let model = args.model.as_deref().map(load_model).transpose()?;
    let side = |fasta| DatasetPaths {
        fasta: Some(fasta),
        labels: Some(&args.labels),
        ..Default::default()
    };
    let records = load_records(&side(&args.fasta))?;
    let labels = records
        .iter()
        .map(|r| r.label.as_ref().ok_or_else(|| CliError::data(format!("{} has no label", r.id))))
        .collect::<CliResult<Vec<_>>>()?;
    let pairs: Vec<(usize, usize)> = match &args.pairs {
        Some(p) => {
            let index: HashMap<&str, usize> = records.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
            read_pairs(p, &index)?
        }
        None => all_pairs(&records)?.iter().map(|p| (p.a, p.b)).collect(),
    };
    let truth: Vec<u8> = pairs.iter().map(|&(i, j)| hierarchy_level(labels[i], labels[j])).collect();
    let scores = score_index_pairs(args.scorer, model.as_ref(), &records, &records, &pairs)?;

    let mut out = Outcome::new(args, ctx.seed.unwrap_or(0));
    let (rule, predicted) = match (&args.calibration, &model) {
        (Some(cal), _) => {
            let cal_records = load_records(&side(cal))?;
            let cal_pairs = all_pairs(&cal_records)?;
            let idx: Vec<(usize, usize)> = cal_pairs.iter().map(|p| (p.a, p.b)).collect();
            let cal_scores = score_index_pairs(args.scorer, model.as_ref(), &cal_records, &cal_records, &idx)?;
            let levels: Vec<u8> = cal_pairs.iter().map(|p| p.level).collect();
            let t = fit_thresholds(&cal_scores, &levels)?;
            let cuts: Vec<String> = t.cuts.iter().map(|&c| num(c)).collect();
            out.write(
                &sibling(&args.out, ".thresholds.tsv"),
                format!("t1\tt2\tt3\tt4\n{}\n", cuts.join("\t")),
            )?;
            ("thresholds", scores.iter().map(|&s| t.level(s)).collect::<Vec<u8>>())
        }
        (None, Some(m)) if Some(m.scorer) == args.scorer.model_scorer() => {
            ("ordinal-head", scores.iter().map(|&s| m.predict_level(s)).collect())
        }
        _ => {
            return Err(CliError::usage(
                "levels for this scorer need --calibration (the ordinal head only fits the model's own scorer)",
            ))
        }
    };
    let report: EvalReport = evaluate_pairs(&scores, &predicted, &truth)?;
    let scorer = serde_json::to_value(args.scorer).expect("serializable");
    let tsv = format!(
        "scorer\tlevels\t{}\n{}\t{rule}\t{}\n",
        EvalReport::TSV_HEADER,
        scorer.as_str().unwrap_or_default(),
        report.tsv_row()
    );
    out.input(&args.fasta);
    out.input(&args.labels);
    out.input_opt(args.pairs.as_ref());
    out.input_opt(args.model.as_ref());
    out.input_opt(args.calibration.as_ref());
    out.write(&args.out, tsv)?;
    Ok(out.manifest_beside(&args.out))
}

/// Contact prediction metrics with the model's contact head, macro-averaged
/// over proteins. Output rows: `separation metric value`, for minimum
/// separations 2 and 12.
#[derive(Args, Debug, Serialize)]
pub struct ContactArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Sequences to embed; alternatively give --embeddings.
    #[arg(long, required_unless_present = "embeddings", conflicts_with = "embeddings")]
    pub fasta: Option<PathBuf>,
    /// Output of `embed` for the same model.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub coords: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn eval_contacts(args: &ContactArgs, ctx: &Ctx) -> CliResult<Outcome> {
    let model = load_model(&args.model)?;
    let items: Vec<(String, Tensor, ContactMap)> = match (&args.fasta, &args.embeddings) {
        (Some(fasta), _) => {
            let records = load_records(&DatasetPaths {
                fasta: Some(fasta),
                coords: Some(&args.coords),
                ..Default::default()
            })?;
            let records: Vec<_> = records.into_iter().filter(|r| r.contacts.is_some()).collect();
            let z = embed_all(&model, &records)?;
            records
                .into_iter()
                .zip(z)
                .map(|(r, z)| (r.id, z, r.contacts.expect("filtered")))
                .collect()
        }
        (None, Some(emb)) => {
            let zs = parse_embeddings(&io_context(fs::read_to_string(emb), emb)?)?;
            let coords = parse_coords_tsv(&io_context(fs::read_to_string(&args.coords), &args.coords)?)?;
            let mut items = Vec::new();
            for (id, z) in zs {
                if let Some(pts) = coords.get(&id) {
                    if pts.len() != z.rows() {
                        return Err(CliError::data(format!(
                            "{id}: {} coordinates for {} embedded positions",
                            pts.len(),
                            z.rows()
                        )));
                    }
                    items.push((id, z, contacts_from_coordinates(pts, CONTACT_THRESHOLD)?));
                }
            }
            items
        }
        (None, None) => return Err(CliError::usage("give --fasta or --embeddings")),
    };
    if items.is_empty() {
        return Err(CliError::data("no sequence has coordinates"));
    }
    let probs: Vec<Tensor> = items
        .iter()
        .map(|(_, z, _)| model.contact_probabilities(z))
        .collect::<protembed::Result<_>>()?;
    let mut tsv = String::from("separation\tmetric\tvalue\n");
    for sep in EVAL_SEPARATIONS {
        let per: Vec<_> = items
            .iter()
            .zip(&probs)
            .map(|((_, _, map), p)| contact_metrics(p, map, sep))
            .collect::<protembed::Result<_>>()?;
        let mean = mean_metrics(&per);
        tsv.push_str(&format!("{sep}\tproteins\t{}\n", per.len()));
        for (name, v) in mean.fields() {
            tsv.push_str(&format!("{sep}\t{name}\t{}\n", protembed::eval::report::fmt_opt(v)));
        }
    }
    let mut out = Outcome::new(args, ctx.seed.unwrap_or(0));
    out.input(&args.model);
    out.input_opt(args.fasta.as_ref());
    out.input_opt(args.embeddings.as_ref());
    out.input(&args.coords);
    out.write(&args.out, tsv)?;
    Ok(out.manifest_beside(&args.out))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeFeatures {
    /// Per-position embeddings from `embed`.
    Embed,
    /// One-hot window of k residues centred on each position.
    Kmer,
}

/// Secondary-structure probe: trains an MLP on per-position features of the
/// training records and reports accuracy and perplexity on the test
/// records. Output columns: `features k train_positions test_positions
/// accuracy perplexity train_accuracy`.
#[derive(Args, Debug)]
pub struct ProbeArgs {
    /// Per-position 8-class labels (H B E G I T S C).
    #[arg(long)]
    pub ss: PathBuf,
    #[arg(long, value_enum)]
    pub features: Option<ProbeFeatures>,
    /// Needed for --features embed.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Needed for --features kmer.
    #[arg(long)]
    pub fasta: Option<PathBuf>,
    /// Odd k-mer window width.
    #[arg(long)]
    pub k: Option<usize>,
    /// One id per line; default is a seeded random split by record.
    #[arg(long)]
    pub test_ids: Option<PathBuf>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Units in each of the two hidden layers.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeRunConfig {
    pub features: ProbeFeatures,
    pub k: usize,
    pub test_fraction: f64,
    pub probe: ProbeConfig,
}

impl Default for ProbeRunConfig {
    fn default() -> Self {
        ProbeRunConfig {
            features: ProbeFeatures::Embed,
            k: 1,
            test_fraction: 0.25,
            probe: ProbeConfig::default(),
        }
    }
}

fn stack(parts: &[&Tensor]) -> CliResult<Tensor> {
    let rows: Vec<Vec<f64>> = parts
        .iter()
        .flat_map(|t| (0..t.rows()).map(move |i| t.row(i).to_vec()))
        .collect();
    Ok(Tensor::from_rows(&rows)?)
}

pub fn probe_ss(args: &ProbeArgs, ctx: &Ctx) -> CliResult<Outcome> {
    let mut cfg: ProbeRunConfig = ctx.load_config()?;
    cfg.features = args.features.unwrap_or(cfg.features);
    cfg.k = args.k.unwrap_or(cfg.k);
    cfg.test_fraction = args.test_fraction.unwrap_or(cfg.test_fraction);
    cfg.probe.hidden = args.hidden.unwrap_or(cfg.probe.hidden);
    cfg.probe.epochs = args.epochs.unwrap_or(cfg.probe.epochs);
    cfg.probe.batch_size = args.batch_size.unwrap_or(cfg.probe.batch_size);
    cfg.probe.adam.lr = args.lr.unwrap_or(cfg.probe.adam.lr);
    cfg.probe.seed = ctx.seed_or(cfg.probe.seed);
    if !(0.0..1.0).contains(&cfg.test_fraction) || cfg.test_fraction == 0.0 {
        return Err(CliError::usage("test_fraction must lie in (0, 1)"));
    }

    let mut out = Outcome::new(&cfg, cfg.probe.seed);
    out.input(&args.ss);
    let ss_text = io_context(fs::read_to_string(&args.ss), &args.ss)?;
    let ss: HashMap<String, Vec<u8>> = parse_position_labels_tsv(&ss_text)?
        .into_iter()
        .map(|(id, ls)| {
            let classes = ls
                .iter()
                .map(|s| ss_class_from_str(s).ok_or_else(|| CliError::data(format!("{id}: bad SS label {s:?}"))))
                .collect::<CliResult<Vec<u8>>>()?;
            Ok((id, classes))
        })
        .collect::<CliResult<_>>()?;

    let features: Vec<(String, Tensor)> = match cfg.features {
        ProbeFeatures::Embed => {
            let p = args
                .embeddings
                .as_ref()
                .ok_or_else(|| CliError::usage("--features embed needs --embeddings"))?;
            out.input(p);
            parse_embeddings(&io_context(fs::read_to_string(p), p)?)?
        }
        ProbeFeatures::Kmer => {
            let p = args
                .fasta
                .as_ref()
                .ok_or_else(|| CliError::usage("--features kmer needs --fasta"))?;
            out.input(p);
            load_records(&DatasetPaths {
                fasta: Some(p),
                ..Default::default()
            })?
            .into_iter()
            .map(|r| Ok((r.id, kmer_features(&r.tokens, cfg.k)?)))
            .collect::<CliResult<_>>()?
        }
    };
    let labelled: Vec<(&str, &Tensor, &[u8])> = features
        .iter()
        .filter_map(|(id, x)| ss.get(id).map(|y| (id.as_str(), x, y.as_slice())))
        .collect();
    for (id, x, y) in &labelled {
        if x.rows() != y.len() {
            return Err(CliError::data(format!("{id}: {} feature rows for {} SS labels", x.rows(), y.len())));
        }
    }
    if labelled.len() < 2 {
        return Err(CliError::data("the probe needs at least two records with SS labels"));
    }

    let is_test: Vec<bool> = match &args.test_ids {
        Some(p) => {
            out.input(p);
            let text = io_context(fs::read_to_string(p), p)?;
            let ids: std::collections::HashSet<&str> =
                text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).collect();
            labelled.iter().map(|(id, _, _)| ids.contains(id)).collect()
        }
        None => {
            let n = labelled.len();
            let take = ((cfg.test_fraction * n as f64).round() as usize).clamp(1, n - 1);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.probe.seed));
            let mut flags = vec![false; n];
            for &i in &order[..take] {
                flags[i] = true;
            }
            flags
        }
    };
    let split = |test: bool| {
        let picked: Vec<&(&str, &Tensor, &[u8])> =
            labelled.iter().zip(&is_test).filter(|(_, &t)| t == test).map(|(l, _)| l).collect();
        let x: Vec<&Tensor> = picked.iter().map(|l| l.1).collect();
        let y: Vec<u8> = picked.iter().flat_map(|l| l.2.iter().copied()).collect();
        (x, y)
    };
    let (train_x, train_y) = split(false);
    let (test_x, test_y) = split(true);
    if train_x.is_empty() || test_x.is_empty() {
        return Err(CliError::data("train or test split is empty"));
    }
    let result = ss_probe(&stack(&train_x)?, &train_y, &stack(&test_x)?, &test_y, &cfg.probe)?;
    let k = match cfg.features {
        ProbeFeatures::Kmer => cfg.k.to_string(),
        ProbeFeatures::Embed => "NA".into(),
    };
    let features = serde_json::to_value(cfg.features).expect("serializable");
    let tsv = format!(
        "features\tk\ttrain_positions\ttest_positions\taccuracy\tperplexity\ttrain_accuracy\n{}\t{k}\t{}\t{}\t{}\t{}\t{}\n",
        features.as_str().unwrap_or_default(),
        train_y.len(),
        test_y.len(),
        num(result.accuracy),
        num(result.perplexity),
        num(result.train_accuracy)
    );
    out.write(&args.out, tsv)?;
    Ok(out.manifest_beside(&args.out))
}
