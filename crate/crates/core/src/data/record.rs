use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::alphabet::Token;
use crate::error::{Error, Result};

/// Position in a four-level structural hierarchy:
/// class, fold, superfamily, family.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HierarchyLabel(pub [String; 4]);

impl HierarchyLabel {
    pub fn new(class: &str, fold: &str, superfamily: &str, family: &str) -> Self {
        HierarchyLabel([
            class.to_string(),
            fold.to_string(),
            superfamily.to_string(),
            family.to_string(),
        ])
    }
}

impl fmt::Display for HierarchyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.join("."))
    }
}

impl FromStr for HierarchyLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('.').collect();
        if parts.len() != 4 || parts.iter().any(|p| p.is_empty()) {
            return Err(Error::data(format!("hierarchy label {s:?} is not class.fold.superfamily.family")));
        }
        Ok(HierarchyLabel::new(parts[0], parts[1], parts[2], parts[3]))
    }
}

/// Number of leading hierarchy levels two labels share (0..=4).
pub fn hierarchy_level(a: &HierarchyLabel, b: &HierarchyLabel) -> u8 {
    a.0.iter().zip(&b.0).take_while(|(x, y)| x == y).count() as u8
}

/// Symmetric binary contact matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContactMap {
    n: usize,
    data: Vec<bool>,
}

impl ContactMap {
    pub fn empty(n: usize) -> Self {
        ContactMap {
            n,
            data: vec![false; n * n],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.n + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.data[i * self.n + j] = value;
        self.data[j * self.n + i] = value;
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionKind {
    SignalPeptide,
    Transmembrane,
    Inside,
    Outside,
    Globular,
}

impl RegionKind {
    pub fn letter(self) -> char {
        match self {
            RegionKind::SignalPeptide => 'S',
            RegionKind::Transmembrane => 'M',
            RegionKind::Inside => 'I',
            RegionKind::Outside => 'O',
            RegionKind::Globular => 'G',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        Some(match c.to_ascii_uppercase() {
            'S' => RegionKind::SignalPeptide,
            'M' => RegionKind::Transmembrane,
            'I' => RegionKind::Inside,
            'O' => RegionKind::Outside,
            'G' => RegionKind::Globular,
            _ => return None,
        })
    }
}

/// Half-open span `[start, end)` of one region kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub kind: RegionKind,
    pub start: usize,
    pub end: usize,
}

impl Region {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlap(&self, other: &Region) -> usize {
        self.end.min(other.end).saturating_sub(self.start.max(other.start))
    }
}

/// Collapses a per-position kind sequence into maximal runs.
pub fn regions_from_labels(labels: &[RegionKind]) -> Vec<Region> {
    let mut out: Vec<Region> = Vec::new();
    for (i, &k) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(r) if r.kind == k => r.end = i + 1,
            _ => out.push(Region {
                kind: k,
                start: i,
                end: i + 1,
            }),
        }
    }
    out
}

pub fn labels_from_regions(regions: &[Region]) -> Vec<RegionKind> {
    regions
        .iter()
        .flat_map(|r| std::iter::repeat_n(r.kind, r.len()))
        .collect()
}

/// Secondary-structure classes, DSSP eight-state order.
pub const SS_LETTERS: [char; 8] = ['H', 'B', 'E', 'G', 'I', 'T', 'S', 'C'];

pub fn ss_class_from_str(s: &str) -> Option<u8> {
    if let Ok(v) = s.parse::<u8>() {
        return (v < 8).then_some(v);
    }
    let mut chars = s.chars();
    let c = chars.next()?;
    if chars.next().is_some() {
        return None;
    }
    let c = if c == '-' { 'C' } else { c.to_ascii_uppercase() };
    SS_LETTERS.iter().position(|&l| l == c).map(|p| p as u8)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProteinRecord {
    pub id: String,
    pub tokens: Vec<Token>,
    pub label: Option<HierarchyLabel>,
    pub coords: Option<Vec<[f64; 3]>>,
    pub contacts: Option<ContactMap>,
    pub ss: Option<Vec<u8>>,
    pub regions: Option<Vec<Region>>,
}

impl ProteinRecord {
    pub fn new(id: impl Into<String>, tokens: Vec<Token>) -> Self {
        ProteinRecord {
            id: id.into(),
            tokens,
            label: None,
            coords: None,
            contacts: None,
            ss: None,
            regions: None,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(Error::data(format!("{}: empty sequence", self.id)));
        }
        if let Some(c) = &self.coords {
            if c.len() != n {
                return Err(Error::data(format!("{}: {} coordinates for {} residues", self.id, c.len(), n)));
            }
        }
        if let Some(m) = &self.contacts {
            if m.len() != n || !m.is_symmetric() {
                return Err(Error::data(format!("{}: contact map must be symmetric {n}x{n}", self.id)));
            }
        }
        if let Some(ss) = &self.ss {
            if ss.len() != n || ss.iter().any(|&c| c >= 8) {
                return Err(Error::data(format!("{}: bad secondary-structure labels", self.id)));
            }
        }
        if let Some(rs) = &self.regions {
            let mut pos = 0;
            for r in rs {
                if r.start != pos || r.is_empty() {
                    return Err(Error::data(format!("{}: regions must be sorted, contiguous and non-empty", self.id)));
                }
                pos = r.end;
            }
            if pos != n {
                return Err(Error::data(format!("{}: regions cover {pos} of {n} positions", self.id)));
            }
        }
        Ok(())
    }
}
