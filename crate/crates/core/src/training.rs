//! Multitask optimization: `λ·L_similarity + (1−λ)·L_contact` over the
//! encoder, ordinal head and contact head, with the language model frozen.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::contact::{contact_loss_from_logits, ContactHead, DEFAULT_MIN_SEPARATION};
use crate::data::record::hierarchy_level;
use crate::data::{perturb_sequence, PairSampler, ProteinRecord, Token};
use crate::encoder::{Architecture, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::eval::report::{evaluate_pairs, EvalReport};
use crate::lm::LanguageModel;
use crate::nn::{Adam, AdamConfig, Params, Tensor};
use crate::similarity::{predict_level, similarity_loss, OrdinalHead, Scorer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub pair_batch: usize,
    pub contact_batch: usize,
    pub epochs: usize,
    /// Pair draws per epoch.
    pub epoch_size: usize,
    pub smoothing: f64,
    pub perturbation: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub scorer: Scorer,
    pub contact_hidden: usize,
    pub min_separation: usize,
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    /// Desk scale: minutes on a laptop CPU for the default synthetic corpus.
    fn default() -> Self {
        TrainConfig {
            lambda: 0.1,
            pair_batch: 64,
            contact_batch: 10,
            epochs: 30,
            epoch_size: 2_000,
            smoothing: 0.5,
            perturbation: 0.05,
            adam: AdamConfig::default(),
            seed: 0,
            scorer: Scorer::Ssa,
            contact_hidden: 16,
            min_separation: DEFAULT_MIN_SEPARATION,
            encoder: EncoderConfig {
                arch: Architecture::BiLstm1,
                hidden: 32,
                dim: 16,
                fusion: 32,
                use_lm: true,
            },
        }
    }
}

impl TrainConfig {
    /// Full-size encoder, contact head and schedule.
    pub fn full_scale() -> Self {
        TrainConfig {
            epochs: 100,
            epoch_size: 100_000,
            contact_hidden: 50,
            encoder: EncoderConfig {
                arch: Architecture::BiLstm3,
                hidden: 512,
                dim: 100,
                fusion: 512,
                use_lm: true,
            },
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if self.pair_batch == 0 || self.contact_batch == 0 {
            return Err(Error::Config("batch sizes must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.perturbation) {
            return Err(Error::Config("perturbation probability must lie in [0, 1]".into()));
        }
        if self.contact_hidden == 0 {
            return Err(Error::Config("contact hidden width must be >= 1".into()));
        }
        self.encoder.validate()
    }

    fn uses_similarity(&self) -> bool {
        self.lambda > 0.0
    }

    fn uses_contacts(&self) -> bool {
        self.lambda < 1.0
    }
}

/// Parameters updated by training.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainable {
    pub encoder: Encoder,
    pub ordinal: OrdinalHead,
    pub contact: ContactHead,
}

impl Params for Trainable {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        use crate::nn::params::join;
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.ordinal.visit(&join(prefix, "ordinal"), f);
        self.contact.visit(&join(prefix, "contact"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        use crate::nn::params::join;
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.ordinal.visit_mut(&join(prefix, "ordinal"), f);
        self.contact.visit_mut(&join(prefix, "contact"), f);
    }
}

/// Everything needed to embed and compare sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub params: Trainable,
    pub lm: Option<LanguageModel>,
    pub scorer: Scorer,
}

struct Forward {
    lm: Option<Tensor>,
    trace: crate::encoder::EncoderTrace,
}

impl Model {
    pub fn init(config: &TrainConfig, lm: Option<LanguageModel>, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let lm = if config.encoder.use_lm { lm } else { None };
        let encoder = Encoder::init(&config.encoder, lm.as_ref().map(|m| m.state_dim()), rng)?;
        let contact = ContactHead::init(encoder.dim(), config.contact_hidden, rng);
        Ok(Model {
            params: Trainable {
                encoder,
                ordinal: OrdinalHead::new(),
                contact,
            },
            lm,
            scorer: config.scorer,
        })
    }

    pub fn dim(&self) -> usize {
        self.params.encoder.dim()
    }

    fn lm_states(&self, tokens: &[Token]) -> Result<Option<Tensor>> {
        match (&self.lm, self.params.encoder.config.use_lm) {
            (Some(lm), true) => Ok(Some(lm.hidden_states(tokens)?)),
            (None, true) => Err(Error::Config("encoder expects language-model inputs but none is loaded".into())),
            (_, false) => Ok(None),
        }
    }

    fn forward(&self, tokens: &[Token]) -> Result<Forward> {
        let lm = self.lm_states(tokens)?;
        let trace = self.params.encoder.forward(tokens, lm.as_ref())?;
        Ok(Forward { lm, trace })
    }

    fn backward(&self, tokens: &[Token], fw: &Forward, dz: &Tensor, grads: &mut Trainable) {
        self.params
            .encoder
            .backward(tokens, fw.lm.as_ref(), &fw.trace, dz, &mut grads.encoder);
    }

    /// Per-position embeddings `n × D`.
    pub fn embed(&self, tokens: &[Token]) -> Result<Tensor> {
        Ok(self.forward(tokens)?.trace.z)
    }

    pub fn score(&self, za: &Tensor, zb: &Tensor) -> Result<f64> {
        self.scorer.score(za, zb)
    }

    pub fn predict_level(&self, score: f64) -> u8 {
        predict_level(score, &self.params.ordinal.coefficients())
    }

    pub fn contact_probabilities(&self, z: &Tensor) -> Result<Tensor> {
        self.params.contact.probabilities(z)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let enc = &self.params.encoder;
        let mut ck = Checkpoint::new(json!({
            "kind": "embedding-model",
            "encoder": enc.config,
            "lm_dim": enc.fusion.lm_dim(),
            "contact_hidden": self.params.contact.hidden_dim(),
            "scorer": self.scorer,
            "lm": self.lm.as_ref().map(|m| json!({"hidden": m.hidden_dim(), "layers": m.num_layers()})),
        }));
        ck.push_params("model", &self.params);
        if let Some(lm) = &self.lm {
            ck.push_params("lm", lm);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta = &ck.metadata;
        if meta["kind"] != "embedding-model" {
            return Err(Error::Checkpoint("not an embedding-model checkpoint".into()));
        }
        let bad = |what: &str| Error::Checkpoint(format!("metadata field {what} missing or invalid"));
        let encoder_config: EncoderConfig =
            serde_json::from_value(meta["encoder"].clone()).map_err(|_| bad("encoder"))?;
        let lm_dim: Option<usize> = serde_json::from_value(meta["lm_dim"].clone()).map_err(|_| bad("lm_dim"))?;
        let contact_hidden = meta["contact_hidden"].as_u64().ok_or_else(|| bad("contact_hidden"))? as usize;
        let scorer: Scorer = serde_json::from_value(meta["scorer"].clone()).map_err(|_| bad("scorer"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let encoder = Encoder::init(&encoder_config, lm_dim, &mut rng)?;
        let contact = ContactHead::zeros(encoder.dim(), contact_hidden);
        let mut params = Trainable {
            encoder,
            ordinal: OrdinalHead::new(),
            contact,
        };
        ck.load_params("model", &mut params)?;
        let lm = match &meta["lm"] {
            serde_json::Value::Null => None,
            v => {
                let hidden = v["hidden"].as_u64().ok_or_else(|| bad("lm.hidden"))? as usize;
                let layers = v["layers"].as_u64().ok_or_else(|| bad("lm.layers"))? as usize;
                let mut lm = LanguageModel::init(hidden, layers, &mut rng);
                ck.load_params("lm", &mut lm)?;
                Some(lm)
            }
        };
        Ok(Model { params, lm, scorer })
    }
}

/// One labelled pair of records.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub a: usize,
    pub b: usize,
    pub level: u8,
}

/// Every unordered pair of labelled records, `(i, j)` with `i < j`.
pub fn all_pairs(records: &[ProteinRecord]) -> Result<Vec<LabeledPair>> {
    let labels = records
        .iter()
        .map(|r| r.label.as_ref().ok_or_else(|| Error::data(format!("record {} has no hierarchy label", r.id))))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for i in 0..records.len() {
        for j in i + 1..records.len() {
            out.push(LabeledPair {
                a: i,
                b: j,
                level: hierarchy_level(labels[i], labels[j]),
            });
        }
    }
    Ok(out)
}

/// Embeds each record once (in parallel, results in input order).
pub fn embed_all(model: &Model, records: &[ProteinRecord]) -> Result<Vec<Tensor>> {
    records.par_iter().map(|r| model.embed(&r.tokens)).collect()
}

/// Raw scores for `pairs` given precomputed embeddings.
pub fn score_pairs(model: &Model, embeddings: &[Tensor], pairs: &[LabeledPair]) -> Result<Vec<f64>> {
    pairs
        .par_iter()
        .map(|p| model.score(&embeddings[p.a], &embeddings[p.b]))
        .collect()
}

/// Accuracy of the ordinal head's predicted level plus correlations and
/// per-level AP of the raw score.
pub fn validate(model: &Model, records: &[ProteinRecord], pairs: &[LabeledPair]) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("validation pairs"));
    }
    let embeddings = embed_all(model, records)?;
    let scores = score_pairs(model, &embeddings, pairs)?;
    let predicted: Vec<u8> = scores.iter().map(|&s| model.predict_level(s)).collect();
    let truth: Vec<u8> = pairs.iter().map(|p| p.level).collect();
    evaluate_pairs(&scores, &predicted, &truth)
}

/// Training inputs for one step: token sequences already perturbed.
pub struct StepBatch {
    pub pairs: Vec<(Vec<Token>, Vec<Token>, u8)>,
    pub contacts: Vec<(Vec<Token>, crate::data::ContactMap)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub similarity: Option<f64>,
    pub contact: Option<f64>,
    pub combined: f64,
}

/// Loss and gradients of `λ·L_sim + (1−λ)·L_contact` for one batch. A
/// branch with weight zero is skipped entirely.
pub fn multitask_loss_and_grad(
    model: &Model,
    batch: &StepBatch,
    lambda: f64,
    min_separation: usize,
) -> Result<(StepLosses, Trainable)> {
    let mut grads = model.params.zeros_like();
    let mut losses = StepLosses {
        similarity: None,
        contact: None,
        combined: 0.0,
    };
    if lambda > 0.0 {
        if batch.pairs.is_empty() {
            return Err(Error::Empty("similarity batch"));
        }
        let forwards: Vec<(Forward, Forward)> = batch
            .pairs
            .par_iter()
            .map(|(a, b, _)| Ok((model.forward(a)?, model.forward(b)?)))
            .collect::<Result<_>>()?;
        let scored: Vec<(f64, u8)> = forwards
            .iter()
            .zip(&batch.pairs)
            .map(|((fa, fb), p)| Ok((model.score(&fa.trace.z, &fb.trace.z)?, p.2)))
            .collect::<Result<_>>()?;
        let (loss, dscores, ordinal_grads) = similarity_loss(&scored, &model.params.ordinal);
        let parts: Vec<Trainable> = forwards
            .par_iter()
            .zip(&batch.pairs)
            .zip(&dscores)
            .map(|(((fa, fb), (a, b, _)), &ds)| {
                let (_, dza, dzb) = model.scorer.score_and_grad(&fa.trace.z, &fb.trace.z, lambda * ds)?;
                let mut g = model.params.zeros_like();
                model.backward(a, fa, &dza, &mut g);
                model.backward(b, fb, &dzb, &mut g);
                Ok(g)
            })
            .collect::<Result<_>>()?;
        for g in &parts {
            grads.accumulate(g);
        }
        let mut og = ordinal_grads;
        og.scale_all(lambda);
        grads.ordinal.accumulate(&og);
        losses.similarity = Some(loss);
        losses.combined += lambda * loss;
    }
    if lambda < 1.0 {
        if batch.contacts.is_empty() {
            return Err(Error::Empty("contact batch"));
        }
        let scale = (1.0 - lambda) / batch.contacts.len() as f64;
        let parts: Vec<(f64, Trainable)> = batch
            .contacts
            .par_iter()
            .map(|(tokens, map)| {
                let fw = model.forward(tokens)?;
                let ct = model.params.contact.forward(&fw.trace.z)?;
                let (loss, mut dlogits) = contact_loss_from_logits(&ct.logits, map, min_separation)?;
                dlogits.scale(scale);
                let mut g = model.params.zeros_like();
                let dz = model.params.contact.backward(&fw.trace.z, &ct, &dlogits, &mut g.contact);
                model.backward(tokens, &fw, &dz, &mut g);
                Ok((loss, g))
            })
            .collect::<Result<_>>()?;
        let mut total = 0.0;
        for (l, g) in &parts {
            total += l;
            grads.accumulate(g);
        }
        let loss = total / parts.len() as f64;
        losses.contact = Some(loss);
        losses.combined += (1.0 - lambda) * loss;
    }
    if !losses.combined.is_finite() {
        return Err(Error::NonFinite(format!(
            "combined loss {} (similarity {:?}, contact {:?})",
            losses.combined, losses.similarity, losses.contact
        )));
    }
    Ok((losses, grads))
}

/// Adam state per parameter group; a group is stepped only when its branch
/// is active, so disabled heads stay bitwise unchanged.
pub struct Optimizer {
    encoder: Adam,
    ordinal: Adam,
    contact: Adam,
}

impl Optimizer {
    pub fn new(config: AdamConfig) -> Self {
        Optimizer {
            encoder: Adam::new(config),
            ordinal: Adam::new(config),
            contact: Adam::new(config),
        }
    }
}

pub fn multitask_step(
    model: &mut Model,
    opt: &mut Optimizer,
    batch: &StepBatch,
    lambda: f64,
    min_separation: usize,
) -> Result<StepLosses> {
    let (losses, grads) = multitask_loss_and_grad(model, batch, lambda, min_separation)?;
    opt.encoder.update(&mut model.params.encoder, &grads.encoder)?;
    if lambda > 0.0 {
        opt.ordinal.update(&mut model.params.ordinal, &grads.ordinal)?;
    }
    if lambda < 1.0 {
        opt.contact.update(&mut model.params.contact, &grads.contact)?;
    }
    Ok(losses)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    #[serde(flatten)]
    pub losses: StepLosses,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub validation: Option<EvalReport>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub initial_validation: Option<EvalReport>,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

fn fmt_loss(v: Option<f64>) -> String {
    crate::eval::report::fmt_opt(v)
}

impl TrainLog {
    pub fn steps_tsv(&self) -> String {
        let mut out = String::from("step\tepoch\tsimilarity_loss\tcontact_loss\tcombined_loss\n");
        for s in &self.steps {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                s.step,
                s.epoch,
                fmt_loss(s.losses.similarity),
                fmt_loss(s.losses.contact),
                s.losses.combined
            ));
        }
        out
    }

    pub fn epochs_tsv(&self) -> String {
        let mut out = format!("epoch\t{}\n", EvalReport::TSV_HEADER);
        let mut row = |epoch: usize, v: &Option<EvalReport>| {
            if let Some(r) = v {
                out.push_str(&format!("{epoch}\t{}\n", r.tsv_row()));
            }
        };
        row(0, &self.initial_validation);
        for e in &self.epochs {
            row(e.epoch, &e.validation);
        }
        out
    }

    /// Mean similarity loss over the first and last `k` steps that have one.
    pub fn similarity_loss_ends(&self, k: usize) -> Option<(f64, f64)> {
        let v: Vec<f64> = self.steps.iter().filter_map(|s| s.losses.similarity).collect();
        if v.is_empty() {
            return None;
        }
        let k = k.clamp(1, v.len());
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        Some((mean(&v[..k]), mean(&v[v.len() - k..])))
    }
}

/// Training data and where to write per-epoch checkpoints.
pub struct TrainInputs<'a> {
    pub train: &'a [ProteinRecord],
    /// Records and pairs for per-epoch validation.
    pub heldout: Option<(&'a [ProteinRecord], &'a [LabeledPair])>,
    pub checkpoint_dir: Option<&'a Path>,
}

pub fn train(inputs: &TrainInputs<'_>, config: &TrainConfig, lm: Option<LanguageModel>) -> Result<(Model, TrainLog)> {
    config.validate()?;
    let records = inputs.train;
    if records.is_empty() {
        return Err(Error::Empty("training records"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Model::init(config, lm, &mut rng)?;
    let sampler = if config.uses_similarity() {
        let labels = records
            .iter()
            .map(|r| r.label.clone().ok_or_else(|| Error::data(format!("record {} has no hierarchy label", r.id))))
            .collect::<Result<Vec<_>>>()?;
        Some(PairSampler::new(&labels, config.smoothing)?)
    } else {
        None
    };
    let contact_pool: Vec<usize> = (0..records.len()).filter(|&i| records[i].contacts.is_some()).collect();
    if config.uses_contacts() && contact_pool.is_empty() {
        return Err(Error::Config("lambda < 1 needs contact maps, but no training record has one".into()));
    }
    let mut opt = Optimizer::new(config.adam);
    let mut log = TrainLog::default();
    if let Some((recs, pairs)) = inputs.heldout {
        log.initial_validation = Some(validate(&model, recs, pairs)?);
    }
    if let Some(dir) = inputs.checkpoint_dir {
        fs::create_dir_all(dir)?;
    }
    let steps_per_epoch = config.epoch_size.div_ceil(config.pair_batch).max(1);
    for epoch in 1..=config.epochs {
        let mut remaining = config.epoch_size;
        for _ in 0..steps_per_epoch {
            let pair_count = remaining.min(config.pair_batch);
            remaining -= pair_count;
            let pairs = match &sampler {
                Some(s) => s
                    .sample_batch(pair_count, &mut rng)
                    .into_iter()
                    .map(|d| {
                        let a = perturb_sequence(&records[d.a].tokens, config.perturbation, &mut rng);
                        let b = perturb_sequence(&records[d.b].tokens, config.perturbation, &mut rng);
                        (a, b, d.level)
                    })
                    .collect(),
                None => Vec::new(),
            };
            let contacts = if config.uses_contacts() {
                (0..config.contact_batch)
                    .map(|_| {
                        let r = &records[*contact_pool.choose(&mut rng).expect("non-empty pool")];
                        let toks = perturb_sequence(&r.tokens, config.perturbation, &mut rng);
                        (toks, r.contacts.clone().expect("pool has contacts"))
                    })
                    .collect()
            } else {
                Vec::new()
            };
            let batch = StepBatch { pairs, contacts };
            let losses = multitask_step(&mut model, &mut opt, &batch, config.lambda, config.min_separation)?;
            log.steps.push(StepRecord {
                step: log.steps.len() + 1,
                epoch,
                losses,
            });
        }
        let validation = match inputs.heldout {
            Some((recs, pairs)) => Some(validate(&model, recs, pairs)?),
            None => None,
        };
        let last = log.steps.last().expect("at least one step per epoch");
        log::info!(
            "epoch {epoch}: combined loss {:.4}{}",
            last.losses.combined,
            validation
                .as_ref()
                .map(|v| format!(", validation accuracy {:.4}", v.accuracy))
                .unwrap_or_default()
        );
        log.epochs.push(EpochRecord { epoch, validation });
        if let Some(dir) = inputs.checkpoint_dir {
            model.to_checkpoint().save(&dir.join(format!("epoch_{epoch:03}.ckpt")))?;
        }
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_corpus, SyntheticCorpusConfig};
    use crate::nn::gradcheck::grad_check;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            pair_batch: 4,
            contact_batch: 2,
            epochs: 2,
            epoch_size: 8,
            contact_hidden: 3,
            encoder: EncoderConfig {
                arch: Architecture::BiLstm1,
                hidden: 4,
                dim: 3,
                fusion: 4,
                use_lm: true,
            },
            ..TrainConfig::default()
        }
    }

    fn corpus(seed: u64) -> Vec<ProteinRecord> {
        let cfg = SyntheticCorpusConfig {
            families_per_superfamily: 2,
            sequences_per_family: 2,
            min_length: 8,
            max_length: 12,
            ..Default::default()
        };
        generate_synthetic_corpus(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn tiny_lm() -> LanguageModel {
        LanguageModel::init(3, 1, &mut ChaCha8Rng::seed_from_u64(99))
    }

    fn batch(records: &[ProteinRecord]) -> StepBatch {
        StepBatch {
            pairs: vec![
                (records[0].tokens.clone(), records[1].tokens.clone(), 4),
                (records[0].tokens.clone(), records[5].tokens.clone(), 1),
                (records[2].tokens.clone(), records[7].tokens.clone(), 0),
            ],
            contacts: vec![
                (records[3].tokens.clone(), records[3].contacts.clone().unwrap()),
                (records[6].tokens.clone(), records[6].contacts.clone().unwrap()),
            ],
        }
    }

    #[test]
    fn loss_is_linear_in_lambda() {
        let recs = corpus(1);
        let model = Model::init(&tiny_config(), Some(tiny_lm()), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let b = batch(&recs);
        let (sim, _) = multitask_loss_and_grad(&model, &b, 1.0, 2).unwrap();
        let (con, _) = multitask_loss_and_grad(&model, &b, 0.0, 2).unwrap();
        assert_eq!(sim.contact, None);
        assert_eq!(con.similarity, None);
        let (ls, lc) = (sim.similarity.unwrap(), con.contact.unwrap());
        for lambda in [0.1, 0.5, 0.9] {
            let (mix, _) = multitask_loss_and_grad(&model, &b, lambda, 2).unwrap();
            assert_eq!(mix.similarity, Some(ls));
            assert_eq!(mix.contact, Some(lc));
            assert!((mix.combined - (lambda * ls + (1.0 - lambda) * lc)).abs() < 1e-12);
        }
    }

    #[test]
    fn combined_gradient_matches_finite_differences() {
        let recs = corpus(3);
        let b = batch(&recs);
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut model = Model::init(&tiny_config(), Some(tiny_lm()), &mut rng).unwrap();
            model.params.visit_mut("", &mut |_, t| {
                t.data_mut().iter_mut().for_each(|x| *x += rng.gen_range(-0.2..0.2));
            });
            let with = |p: &Trainable| Model {
                params: p.clone(),
                ..model.clone()
            };
            let err = grad_check(
                &model.params,
                |p| multitask_loss_and_grad(&with(p), &b, 0.5, 2).unwrap().0.combined,
                |p| multitask_loss_and_grad(&with(p), &b, 0.5, 2).unwrap().1,
                1e-6,
            );
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn parameter_partition_by_lambda() {
        let recs = corpus(4);
        let lm = tiny_lm();
        for (lambda, frozen) in [(1.0, "contact"), (0.0, "ordinal")] {
            let config = TrainConfig { lambda, ..tiny_config() };
            let init = Model::init(&config, Some(lm.clone()), &mut ChaCha8Rng::seed_from_u64(config.seed)).unwrap();
            let inputs = TrainInputs {
                train: &recs,
                heldout: None,
                checkpoint_dir: None,
            };
            let (trained, _) = train(&inputs, &config, Some(lm.clone())).unwrap();
            assert_eq!(trained.lm, Some(lm.clone()), "LM must stay frozen");
            assert_ne!(trained.params.encoder, init.params.encoder);
            match frozen {
                "contact" => {
                    assert_eq!(trained.params.contact, init.params.contact);
                    assert_ne!(trained.params.ordinal, init.params.ordinal);
                }
                _ => {
                    assert_eq!(trained.params.ordinal, init.params.ordinal);
                    assert_ne!(trained.params.contact, init.params.contact);
                }
            }
        }
    }

    #[test]
    fn training_is_reproducible_and_checkpoints_round_trip() {
        let recs = corpus(5);
        let pairs = all_pairs(&recs[..6]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let inputs = TrainInputs {
            train: &recs,
            heldout: Some((&recs[..6], &pairs)),
            checkpoint_dir: Some(dir.path()),
        };
        let config = tiny_config();
        let (m1, log1) = train(&inputs, &config, Some(tiny_lm())).unwrap();
        let (m2, log2) = train(&inputs, &config, Some(tiny_lm())).unwrap();
        assert_eq!(log1, log2);
        assert_eq!(m1, m2);
        assert_eq!(log1.steps.len(), 4);
        assert_eq!(log1.epochs.len(), 2);
        let reloaded = Model::from_checkpoint(&Checkpoint::load(&dir.path().join("epoch_002.ckpt")).unwrap()).unwrap();
        assert_eq!(reloaded, m1);
        let report = validate(&reloaded, &recs[..6], &pairs).unwrap();
        assert_eq!(Some(report), log1.epochs[1].validation);
    }

    #[test]
    fn missing_inputs_are_reported() {
        let mut recs = corpus(6);
        for r in &mut recs {
            r.contacts = None;
        }
        let inputs = TrainInputs {
            train: &recs,
            heldout: None,
            checkpoint_dir: None,
        };
        assert!(matches!(train(&inputs, &tiny_config(), Some(tiny_lm())), Err(Error::Config(_))));
        let model = Model::init(&tiny_config(), Some(tiny_lm()), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(validate(&model, &recs, &[]).is_err());
        let no_lm = Model::init(&tiny_config(), None, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(no_lm.is_err());
        let bad = TrainConfig {
            lambda: 1.5,
            ..tiny_config()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn log_tables_have_consistent_columns() {
        let recs = corpus(7);
        let pairs = all_pairs(&recs[..4]).unwrap();
        let inputs = TrainInputs {
            train: &recs,
            heldout: Some((&recs[..4], &pairs)),
            checkpoint_dir: None,
        };
        let (_, log) = train(&inputs, &tiny_config(), Some(tiny_lm())).unwrap();
        for table in [log.steps_tsv(), log.epochs_tsv()] {
            let widths: Vec<usize> = table.lines().map(|l| l.split('\t').count()).collect();
            assert!(widths.windows(2).all(|w| w[0] == w[1]));
        }
        assert_eq!(log.epochs_tsv().lines().count(), 4);
    }
}
