//! Synthetic corpora with a planted hierarchy, surrogate structures and
//! transmembrane topologies, for experiments without external databases.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::alphabet::{Alphabet, Token, NUM_CANONICAL};
use super::io::CONTACT_THRESHOLD;
use super::record::{regions_from_labels, HierarchyLabel, ProteinRecord, RegionKind};
use super::sampling::perturb_sequence;
use super::structure::{build_backbone, contacts_from_coordinates, SegmentKind};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticCorpusConfig {
    pub classes: usize,
    pub folds_per_class: usize,
    pub superfamilies_per_fold: usize,
    pub families_per_superfamily: usize,
    pub sequences_per_family: usize,
    /// Substitution rates applied when deriving a fold from its class
    /// ancestor, a superfamily from its fold, a family from its
    /// superfamily, and a sequence from its family.
    pub mutation_rates: [f64; 4],
    pub min_length: usize,
    pub max_length: usize,
}

impl Default for SyntheticCorpusConfig {
    fn default() -> Self {
        SyntheticCorpusConfig {
            classes: 2,
            folds_per_class: 2,
            superfamilies_per_fold: 1,
            families_per_superfamily: 5,
            sequences_per_family: 5,
            mutation_rates: [0.3, 0.2, 0.2, 0.05],
            min_length: 30,
            max_length: 45,
        }
    }
}

impl SyntheticCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.classes,
            self.folds_per_class,
            self.superfamilies_per_fold,
            self.families_per_superfamily,
            self.sequences_per_family,
        ];
        if counts.contains(&0) {
            return Err(Error::Config("all hierarchy counts must be >= 1".into()));
        }
        if self.mutation_rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config("mutation rates must lie in [0, 1]".into()));
        }
        if self.min_length == 0 || self.min_length > self.max_length {
            return Err(Error::Config("length range must satisfy 1 <= min <= max".into()));
        }
        Ok(())
    }

    pub fn num_families(&self) -> usize {
        self.classes * self.folds_per_class * self.superfamilies_per_fold * self.families_per_superfamily
    }
}

const HELIX_FORMERS: &[u8] = b"AELMQKRH";
const STRAND_FORMERS: &[u8] = b"VIYFWTC";
const COIL_FORMERS: &[u8] = b"GPNDS";

/// DSSP-order class indices used for the surrogate secondary structure.
const SS_HELIX: u8 = 0;
const SS_STRAND: u8 = 2;
const SS_TURN: u8 = 5;
const SS_COIL: u8 = 7;

fn random_layout<R: Rng + ?Sized>(length: usize, rng: &mut R) -> Vec<(SegmentKind, usize)> {
    let mut segs = Vec::new();
    let mut total = 0;
    let mut coil_next = true;
    while total < length {
        let (kind, len) = if coil_next {
            (SegmentKind::Coil, rng.gen_range(2..=4))
        } else if rng.gen_bool(0.5) {
            (SegmentKind::Helix, rng.gen_range(7..=13))
        } else {
            (SegmentKind::Strand, rng.gen_range(4..=7))
        };
        let len = len.min(length - total);
        segs.push((kind, len));
        total += len;
        coil_next = !coil_next;
    }
    segs
}

fn layout_ss(segs: &[(SegmentKind, usize)]) -> Vec<u8> {
    segs.iter()
        .flat_map(|&(k, len)| {
            let c = match k {
                SegmentKind::Helix => SS_HELIX,
                SegmentKind::Strand => SS_STRAND,
                SegmentKind::Coil if len <= 2 => SS_TURN,
                SegmentKind::Coil => SS_COIL,
            };
            std::iter::repeat_n(c, len)
        })
        .collect()
}

fn biased_residues<R: Rng + ?Sized>(segs: &[(SegmentKind, usize)], rng: &mut R) -> Vec<Token> {
    let alphabet = Alphabet::standard();
    let mut out = Vec::new();
    for &(k, len) in segs {
        let pool = match k {
            SegmentKind::Helix => HELIX_FORMERS,
            SegmentKind::Strand => STRAND_FORMERS,
            SegmentKind::Coil => COIL_FORMERS,
        };
        for _ in 0..len {
            if rng.gen_bool(0.7) {
                out.push(alphabet.index(*pool.choose(rng).unwrap_or(&b'A')));
            } else {
                out.push(rng.gen_range(0..NUM_CANONICAL) as Token);
            }
        }
    }
    out
}

/// Generates a labelled corpus with a planted class → fold → superfamily →
/// family → sequence tree.
///
/// Each class gets a random length, a secondary-structure layout and an
/// ancestor sequence biased toward the layout; descendants are derived by
/// per-position substitution at the configured rates. Every family gets its
/// own surrogate Cα trace for the class layout, and all of its members share
/// that trace, the derived contact map and the layout's SS labels.
pub fn generate_synthetic_corpus<R: Rng + ?Sized>(
    config: &SyntheticCorpusConfig,
    rng: &mut R,
) -> Result<Vec<ProteinRecord>> {
    config.validate()?;
    let rates = config.mutation_rates;
    let mut out = Vec::new();
    for c in 0..config.classes {
        let length = rng.gen_range(config.min_length..=config.max_length);
        let layout = random_layout(length, rng);
        let ss = layout_ss(&layout);
        let ancestor = biased_residues(&layout, rng);
        for f in 0..config.folds_per_class {
            let fold_seq = perturb_sequence(&ancestor, rates[0], rng);
            for s in 0..config.superfamilies_per_fold {
                let sf_seq = perturb_sequence(&fold_seq, rates[1], rng);
                for m in 0..config.families_per_superfamily {
                    let fam_seq = perturb_sequence(&sf_seq, rates[2], rng);
                    let coords = build_backbone(&layout, rng);
                    let contacts = contacts_from_coordinates(&coords, CONTACT_THRESHOLD)?;
                    let label = HierarchyLabel::new(
                        &format!("c{c}"),
                        &format!("f{f}"),
                        &format!("s{s}"),
                        &format!("m{m}"),
                    );
                    for k in 0..config.sequences_per_family {
                        let mut rec = ProteinRecord::new(
                            format!("c{c}_f{f}_s{s}_m{m}_{k}"),
                            perturb_sequence(&fam_seq, rates[3], rng),
                        );
                        rec.label = Some(label.clone());
                        rec.coords = Some(coords.clone());
                        rec.contacts = Some(contacts.clone());
                        rec.ss = Some(ss.clone());
                        out.push(rec);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Topology categories scored for transmembrane prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TmCategory {
    Tm,
    SpTm,
    Globular,
    GlobularSp,
}

impl TmCategory {
    pub const ALL: [TmCategory; 4] = [TmCategory::Tm, TmCategory::SpTm, TmCategory::Globular, TmCategory::GlobularSp];

    pub fn name(self) -> &'static str {
        match self {
            TmCategory::Tm => "TM",
            TmCategory::SpTm => "SP+TM",
            TmCategory::Globular => "Globular",
            TmCategory::GlobularSp => "Globular+SP",
        }
    }

    /// Category implied by a region annotation.
    pub fn of_regions(regions: &[super::record::Region]) -> TmCategory {
        let sp = regions.first().is_some_and(|r| r.kind == RegionKind::SignalPeptide);
        let tm = regions.iter().any(|r| r.kind == RegionKind::Transmembrane);
        match (sp, tm) {
            (false, true) => TmCategory::Tm,
            (true, true) => TmCategory::SpTm,
            (false, false) => TmCategory::Globular,
            (true, false) => TmCategory::GlobularSp,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticTmConfig {
    pub per_category: usize,
    pub max_helices: usize,
    pub globular_length: (usize, usize),
}

impl Default for SyntheticTmConfig {
    fn default() -> Self {
        SyntheticTmConfig {
            per_category: 10,
            max_helices: 3,
            globular_length: (40, 70),
        }
    }
}

const HYDROPHOBIC: &[u8] = b"LIVFAMWLIVLA";
const POSITIVE: &[u8] = b"KR";
const POLAR: &[u8] = b"STNQGDEKRHPAY";

fn draw(pool: &[u8], n: usize, rng: &mut (impl Rng + ?Sized)) -> Vec<u8> {
    (0..n).map(|_| *pool.choose(rng).unwrap_or(&b'A')).collect()
}

fn push(seq: &mut Vec<u8>, labels: &mut Vec<RegionKind>, residues: Vec<u8>, kind: RegionKind) {
    labels.extend(std::iter::repeat_n(kind, residues.len()));
    seq.extend(residues);
}

fn signal_peptide(rng: &mut (impl Rng + ?Sized)) -> Vec<u8> {
    let mut sp = vec![b'M'];
    sp.extend(draw(POSITIVE, rng.gen_range(2..=4), rng));
    sp.extend(draw(HYDROPHOBIC, rng.gen_range(8..=12), rng));
    sp.extend(draw(b"STGNQ", rng.gen_range(2..=4), rng));
    let middle = *b"SGTQ".choose(rng).unwrap_or(&b'S');
    sp.extend_from_slice(&[b'A', middle, b'A']);
    sp
}

/// Loops facing the cytoplasm are enriched in K/R ("positive inside").
fn loop_residues(kind: RegionKind, n: usize, rng: &mut (impl Rng + ?Sized)) -> Vec<u8> {
    (0..n)
        .map(|_| {
            if kind == RegionKind::Inside && rng.gen_bool(0.35) {
                *POSITIVE.choose(rng).unwrap_or(&b'K')
            } else {
                *POLAR.choose(rng).unwrap_or(&b'S')
            }
        })
        .collect()
}

/// Generates proteins of all four topology categories with per-position
/// region labels.
pub fn generate_synthetic_tm<R: Rng + ?Sized>(config: &SyntheticTmConfig, rng: &mut R) -> Vec<ProteinRecord> {
    let alphabet = Alphabet::standard();
    let mut out = Vec::new();
    for cat in TmCategory::ALL {
        for k in 0..config.per_category {
            let mut seq = Vec::new();
            let mut labels = Vec::new();
            let has_sp = matches!(cat, TmCategory::SpTm | TmCategory::GlobularSp);
            if has_sp {
                push(&mut seq, &mut labels, signal_peptide(rng), RegionKind::SignalPeptide);
            }
            match cat {
                TmCategory::Tm | TmCategory::SpTm => {
                    let mut side = if has_sp || rng.gen_bool(0.5) {
                        RegionKind::Outside
                    } else {
                        RegionKind::Inside
                    };
                    let helices = rng.gen_range(1..=config.max_helices.max(1));
                    push(&mut seq, &mut labels, loop_residues(side, rng.gen_range(3..=10), rng), side);
                    for _ in 0..helices {
                        push(
                            &mut seq,
                            &mut labels,
                            draw(HYDROPHOBIC, rng.gen_range(17..=23), rng),
                            RegionKind::Transmembrane,
                        );
                        side = if side == RegionKind::Inside {
                            RegionKind::Outside
                        } else {
                            RegionKind::Inside
                        };
                        push(&mut seq, &mut labels, loop_residues(side, rng.gen_range(4..=12), rng), side);
                    }
                }
                TmCategory::Globular | TmCategory::GlobularSp => {
                    let (lo, hi) = config.globular_length;
                    let n = rng.gen_range(lo..=hi.max(lo));
                    let residues = (0..n).map(|_| CANONICAL_BYTES[rng.gen_range(0..NUM_CANONICAL)]).collect();
                    push(&mut seq, &mut labels, residues, RegionKind::Globular);
                }
            }
            let mut rec = ProteinRecord::new(
                format!("{}_{k}", cat.name().replace('+', "_").to_lowercase()),
                seq.iter().map(|&b| alphabet.index(b)).collect(),
            );
            rec.regions = Some(regions_from_labels(&labels));
            out.push(rec);
        }
    }
    out
}

const CANONICAL_BYTES: &[u8; 20] = super::alphabet::CANONICAL;
