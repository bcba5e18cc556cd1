//! Global alignment with affine gaps under BLOSUM62.

use std::sync::OnceLock;

use sha2::{Digest, Sha256};

use crate::data::alphabet::CANONICAL;
use crate::data::{Token, NUM_TOKENS, UNKNOWN};
use crate::error::{Error, Result};

const BLOSUM62_TEXT: &str = include_str!("../../data/blosum62.txt");
pub const BLOSUM62_SHA256: &str = "80f789e6ad4cf190fb953b4539007de83a30ae90a14b56ee6ad6b2a6c56ade84";

/// Score of a gap of length `k` is `-(GAP_OPEN + (k - 1) * GAP_EXTEND)`.
pub const GAP_OPEN: i32 = 11;
pub const GAP_EXTEND: i32 = 1;

pub type ScoreMatrix = [[i32; NUM_TOKENS]; NUM_TOKENS];

fn parse_matrix(text: &str) -> Result<ScoreMatrix> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header: Vec<char> = lines
        .next()
        .ok_or_else(|| Error::data("empty substitution matrix"))?
        .split_whitespace()
        .map(|s| s.chars().next().unwrap_or(' '))
        .collect();
    let column = |c: char| header.iter().position(|&h| h == c);
    let symbol = |t: usize| if t == UNKNOWN as usize { 'X' } else { CANONICAL[t] as char };
    let mut rows = std::collections::HashMap::new();
    for line in lines {
        let mut parts = line.split_whitespace();
        let name = parts.next().and_then(|s| s.chars().next()).unwrap_or(' ');
        let values: Vec<i32> = parts
            .map(|v| v.parse().map_err(|_| Error::data(format!("bad matrix entry {v:?}"))))
            .collect::<Result<_>>()?;
        if values.len() != header.len() {
            return Err(Error::data(format!("matrix row {name} has {} entries", values.len())));
        }
        rows.insert(name, values);
    }
    let mut m = [[0; NUM_TOKENS]; NUM_TOKENS];
    for (a, row) in m.iter_mut().enumerate() {
        let values = rows
            .get(&symbol(a))
            .ok_or_else(|| Error::data(format!("matrix lacks row {}", symbol(a))))?;
        for (b, cell) in row.iter_mut().enumerate() {
            let col = column(symbol(b)).ok_or_else(|| Error::data(format!("matrix lacks column {}", symbol(b))))?;
            *cell = values[col];
        }
    }
    Ok(m)
}

/// The shipped BLOSUM62 restricted to the 20 canonical residues plus `X`
/// for the unknown token. Verified against the pinned checksum on first use.
pub fn blosum62() -> &'static ScoreMatrix {
    static M: OnceLock<ScoreMatrix> = OnceLock::new();
    M.get_or_init(|| {
        let digest = hex::encode(Sha256::digest(BLOSUM62_TEXT.as_bytes()));
        assert_eq!(digest, BLOSUM62_SHA256, "shipped BLOSUM62 file does not match its checksum");
        parse_matrix(BLOSUM62_TEXT).expect("shipped BLOSUM62 parses")
    })
}

/// Optimal global alignment score (Gotoh recurrences). One of the
/// sequences may be empty; both empty is an error.
pub fn nw_align_score(a: &[Token], b: &[Token]) -> Result<i32> {
    nw_align_score_with(a, b, blosum62(), GAP_OPEN, GAP_EXTEND)
}

pub fn nw_align_score_with(a: &[Token], b: &[Token], s: &ScoreMatrix, open: i32, extend: i32) -> Result<i32> {
    if a.is_empty() && b.is_empty() {
        return Err(Error::Empty("alignment input"));
    }
    const NEG: i32 = i32::MIN / 4;
    let (n, m) = (a.len(), b.len());
    // match/mismatch, gap in b (consumes a), gap in a (consumes b); rolling rows
    let mut mm = vec![NEG; m + 1];
    let mut gb = vec![NEG; m + 1];
    let mut ga = vec![NEG; m + 1];
    mm[0] = 0;
    for j in 1..=m {
        ga[j] = -(open + (j as i32 - 1) * extend);
    }
    for i in 1..=n {
        let (mut pm, mut pgb, mut pga) = (mm[0], gb[0], ga[0]);
        mm[0] = NEG;
        gb[0] = -(open + (i as i32 - 1) * extend);
        ga[0] = NEG;
        for j in 1..=m {
            let (um, ugb, uga) = (mm[j], gb[j], ga[j]);
            let diag = pm.max(pgb).max(pga);
            mm[j] = diag + s[a[i - 1] as usize][b[j - 1] as usize];
            gb[j] = (um - open).max(ugb - extend).max(uga - open);
            ga[j] = (mm[j - 1] - open).max(ga[j - 1] - extend).max(gb[j - 1] - open);
            pm = um;
            pgb = ugb;
            pga = uga;
        }
    }
    Ok(mm[m].max(gb[m]).max(ga[m]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::encode_sequence;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[derive(Clone, Copy, PartialEq)]
    enum Op {
        Pair,
        GapInB,
        GapInA,
    }

    /// Scores every alignment (sequence of column operations) explicitly.
    fn exhaustive(a: &[Token], b: &[Token]) -> i32 {
        fn walk(a: &[Token], b: &[Token], i: usize, j: usize, prev: Option<Op>, acc: i32, best: &mut i32) {
            if i == a.len() && j == b.len() {
                *best = (*best).max(acc);
                return;
            }
            let gap = |op: Op| if prev == Some(op) { -GAP_EXTEND } else { -GAP_OPEN };
            if i < a.len() && j < b.len() {
                let s = blosum62()[a[i] as usize][b[j] as usize];
                walk(a, b, i + 1, j + 1, Some(Op::Pair), acc + s, best);
            }
            if i < a.len() {
                walk(a, b, i + 1, j, Some(Op::GapInB), acc + gap(Op::GapInB), best);
            }
            if j < b.len() {
                walk(a, b, i, j + 1, Some(Op::GapInA), acc + gap(Op::GapInA), best);
            }
        }
        let mut best = i32::MIN;
        walk(a, b, 0, 0, None, 0, &mut best);
        best
    }

    #[test]
    fn matrix_is_symmetric_with_known_entries() {
        let m = blosum62();
        for a in 0..NUM_TOKENS {
            for b in 0..NUM_TOKENS {
                assert_eq!(m[a][b], m[b][a]);
            }
        }
        let at = |x: &str, y: &str| m[encode_sequence(x)[0] as usize][encode_sequence(y)[0] as usize];
        assert_eq!(at("A", "A"), 4);
        assert_eq!(at("W", "W"), 11);
        assert_eq!(at("C", "C"), 9);
        assert_eq!(at("F", "Y"), 3);
        assert_eq!(at("W", "P"), -4);
        assert_eq!(at("X", "X"), -1);
        assert_eq!(at("A", "X"), 0);
    }

    #[test]
    fn examples() {
        let s = |x: &str| encode_sequence(x);
        assert_eq!(nw_align_score(&s("A"), &s("A")).unwrap(), 4);
        assert_eq!(nw_align_score(&s("A"), &s("")).unwrap(), -11);
        assert_eq!(nw_align_score(&s(""), &s("AAA")).unwrap(), -13);
        assert!(nw_align_score(&s(""), &s("")).is_err());
        // one long gap beats two short ones
        assert_eq!(nw_align_score(&s("WWWW"), &s("WW")).unwrap(), 22 - 12);
    }

    #[test]
    fn matches_exhaustive_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..300 {
            let la = rng.gen_range(0..=5);
            let lb = rng.gen_range(if la == 0 { 1 } else { 0 }..=5);
            let a: Vec<Token> = (0..la).map(|_| rng.gen_range(0..21) as Token).collect();
            let b: Vec<Token> = (0..lb).map(|_| rng.gen_range(0..21) as Token).collect();
            let got = nw_align_score(&a, &b).unwrap();
            assert_eq!(got, exhaustive(&a, &b), "{a:?} {b:?}");
            assert_eq!(got, nw_align_score(&b, &a).unwrap());
        }
    }
}
