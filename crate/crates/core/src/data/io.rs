//! Flat-file formats: FASTA plus tab-separated side tables.
//!
//! All files are UTF-8 with `\n` line endings; lines starting with `#` and
//! blank lines are ignored.
//!
//! | table        | columns                                  |
//! |--------------|------------------------------------------|
//! | labels       | `id  class.fold.superfamily.family`      |
//! | coordinates  | `id  position  x  y  z` (Å, 0-based)      |
//! | per-position | `id  position  label`                    |
//!
//! Embedding files hold, per record, a `>id` line followed by one row of
//! `D` tab-separated reals per position.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use super::alphabet::Alphabet;
use super::record::{
    regions_from_labels, ss_class_from_str, HierarchyLabel, ProteinRecord, RegionKind, SS_LETTERS,
};
use super::structure::contacts_from_coordinates;
use crate::error::{Error, Result};
use crate::nn::Tensor;

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

/// Parses FASTA text into `(id, residues)` pairs in file order.
///
/// The id is the first whitespace-delimited word of the header.
pub fn parse_fasta(bytes: &[u8]) -> Result<Vec<(String, String)>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Format {
        line: 0,
        msg: format!("not UTF-8: {e}"),
    })?;
    let mut out: Vec<(String, String)> = Vec::new();
    let mut header_line = 0;
    for (line, l) in content_lines(text) {
        if let Some(h) = l.strip_prefix('>') {
            if let Some((id, seq)) = out.last() {
                if seq.is_empty() {
                    return Err(Error::Format {
                        line: header_line,
                        msg: format!("record {id:?} has no sequence"),
                    });
                }
            }
            let id = h.split_whitespace().next().unwrap_or("").to_string();
            if id.is_empty() {
                return Err(Error::Format {
                    line,
                    msg: "empty header".into(),
                });
            }
            header_line = line;
            out.push((id, String::new()));
        } else {
            match out.last_mut() {
                Some((_, seq)) => seq.extend(l.chars().filter(|c| !c.is_whitespace())),
                None => {
                    return Err(Error::Format {
                        line,
                        msg: "sequence data before the first header".into(),
                    })
                }
            }
        }
    }
    if let Some((id, seq)) = out.last() {
        if seq.is_empty() {
            return Err(Error::Format {
                line: header_line,
                msg: format!("record {id:?} has no sequence"),
            });
        }
    }
    Ok(out)
}

pub fn write_fasta(records: &[(String, String)]) -> String {
    let mut s = String::new();
    for (id, seq) in records {
        let _ = writeln!(s, ">{id}");
        for chunk in seq.as_bytes().chunks(60) {
            s.push_str(std::str::from_utf8(chunk).unwrap_or_default());
            s.push('\n');
        }
    }
    s
}

fn fields(line: usize, l: &str, want: usize) -> Result<Vec<&str>> {
    let f: Vec<&str> = l.split('\t').collect();
    if f.len() != want {
        return Err(Error::Format {
            line,
            msg: format!("expected {want} tab-separated fields, found {}", f.len()),
        });
    }
    Ok(f)
}

pub fn parse_labels_tsv(text: &str) -> Result<Vec<(String, HierarchyLabel)>> {
    content_lines(text)
        .map(|(line, l)| {
            let f = fields(line, l, 2)?;
            let label = f[1].parse().map_err(|e: Error| Error::Format {
                line,
                msg: e.to_string(),
            })?;
            Ok((f[0].to_string(), label))
        })
        .collect()
}

pub fn write_labels_tsv(labels: &[(String, HierarchyLabel)]) -> String {
    let mut s = String::new();
    for (id, l) in labels {
        let _ = writeln!(s, "{id}\t{l}");
    }
    s
}

fn parse_position(line: usize, s: &str) -> Result<usize> {
    s.parse().map_err(|_| Error::Format {
        line,
        msg: format!("bad position {s:?}"),
    })
}

/// Gathers `(id, position, value)` rows into dense per-id vectors.
fn collect_positions<T: Clone>(rows: Vec<(String, usize, T, usize)>) -> Result<BTreeMap<String, Vec<T>>> {
    let mut by_id: BTreeMap<String, Vec<Option<T>>> = BTreeMap::new();
    for (id, pos, v, line) in rows {
        let slot = by_id.entry(id.clone()).or_default();
        if slot.len() <= pos {
            slot.resize(pos + 1, None);
        }
        if slot[pos].is_some() {
            return Err(Error::Format {
                line,
                msg: format!("duplicate position {pos} for {id}"),
            });
        }
        slot[pos] = Some(v);
    }
    by_id
        .into_iter()
        .map(|(id, v)| {
            let n = v.len();
            let dense: Option<Vec<T>> = v.into_iter().collect();
            dense
                .map(|d| (id.clone(), d))
                .ok_or_else(|| Error::data(format!("{id}: positions 0..{n} are not all present")))
        })
        .collect()
}

pub fn parse_coords_tsv(text: &str) -> Result<BTreeMap<String, Vec<[f64; 3]>>> {
    let mut rows = Vec::new();
    for (line, l) in content_lines(text) {
        let f = fields(line, l, 5)?;
        let pos = parse_position(line, f[1])?;
        let mut p = [0.0; 3];
        for k in 0..3 {
            p[k] = f[2 + k].parse().map_err(|_| Error::Format {
                line,
                msg: format!("bad coordinate {:?}", f[2 + k]),
            })?;
        }
        rows.push((f[0].to_string(), pos, p, line));
    }
    collect_positions(rows)
}

pub fn write_coords_tsv(coords: &[(String, Vec<[f64; 3]>)]) -> String {
    let mut s = String::new();
    for (id, pts) in coords {
        for (i, p) in pts.iter().enumerate() {
            let _ = writeln!(s, "{id}\t{i}\t{:.3}\t{:.3}\t{:.3}", p[0], p[1], p[2]);
        }
    }
    s
}

pub fn parse_position_labels_tsv(text: &str) -> Result<BTreeMap<String, Vec<String>>> {
    let mut rows = Vec::new();
    for (line, l) in content_lines(text) {
        let f = fields(line, l, 3)?;
        let pos = parse_position(line, f[1])?;
        rows.push((f[0].to_string(), pos, f[2].to_string(), line));
    }
    collect_positions(rows)
}

pub fn write_position_labels_tsv(labels: &[(String, Vec<String>)]) -> String {
    let mut s = String::new();
    for (id, ls) in labels {
        for (i, l) in ls.iter().enumerate() {
            let _ = writeln!(s, "{id}\t{i}\t{l}");
        }
    }
    s
}

pub fn ss_labels_to_strings(ss: &[u8]) -> Vec<String> {
    ss.iter().map(|&c| SS_LETTERS[c as usize].to_string()).collect()
}

pub fn region_labels_to_strings(kinds: &[RegionKind]) -> Vec<String> {
    kinds.iter().map(|k| k.letter().to_string()).collect()
}

pub fn write_embeddings(items: &[(String, Tensor)]) -> String {
    let mut s = String::new();
    for (id, z) in items {
        let _ = writeln!(s, ">{id}");
        for i in 0..z.rows() {
            let row: Vec<String> = z.row(i).iter().map(|v| v.to_string()).collect();
            s.push_str(&row.join("\t"));
            s.push('\n');
        }
    }
    s
}

pub fn parse_embeddings(text: &str) -> Result<Vec<(String, Tensor)>> {
    let mut out: Vec<(String, Vec<Vec<f64>>, usize)> = Vec::new();
    let mut width: Option<usize> = None;
    for (line, l) in content_lines(text) {
        if let Some(id) = l.strip_prefix('>') {
            let id = id.trim();
            if id.is_empty() {
                return Err(Error::Format {
                    line,
                    msg: "empty header".into(),
                });
            }
            out.push((id.to_string(), Vec::new(), line));
            continue;
        }
        let Some((_, rows, _)) = out.last_mut() else {
            return Err(Error::Format {
                line,
                msg: "embedding row before the first header".into(),
            });
        };
        let row = l
            .split('\t')
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Format {
                line,
                msg: format!("bad value: {e}"),
            })?;
        if *width.get_or_insert(row.len()) != row.len() {
            return Err(Error::Format {
                line,
                msg: format!("expected {} values, found {}", width.unwrap_or(0), row.len()),
            });
        }
        rows.push(row);
    }
    out.into_iter()
        .map(|(id, rows, line)| {
            if rows.is_empty() {
                return Err(Error::Format {
                    line,
                    msg: format!("record {id:?} has no rows"),
                });
            }
            Ok((id, Tensor::from_rows(&rows)?))
        })
        .collect()
}

/// Paths to the files making up a dataset; only the FASTA is required.
#[derive(Clone, Debug, Default)]
pub struct DatasetPaths<'a> {
    pub fasta: Option<&'a Path>,
    pub labels: Option<&'a Path>,
    pub coords: Option<&'a Path>,
    pub ss: Option<&'a Path>,
    pub tm: Option<&'a Path>,
}

/// Contact threshold used when deriving maps from coordinates.
pub const CONTACT_THRESHOLD: f64 = 8.0;

/// Reads a FASTA file and joins whichever side tables are given.
///
/// Side-table rows for ids absent from the FASTA are ignored.
pub fn load_dataset(paths: &DatasetPaths<'_>) -> Result<Vec<ProteinRecord>> {
    let fasta = paths
        .fasta
        .ok_or_else(|| Error::Config("a FASTA file is required".into()))?;
    let alphabet = Alphabet::standard();
    let mut records: Vec<ProteinRecord> = parse_fasta(&std::fs::read(fasta)?)?
        .into_iter()
        .map(|(id, seq)| ProteinRecord::new(id, alphabet.encode(&seq)))
        .collect();
    let index: HashMap<String, usize> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.clone(), i))
        .collect();
    if index.len() != records.len() {
        return Err(Error::data("duplicate ids in FASTA"));
    }
    if let Some(p) = paths.labels {
        for (id, label) in parse_labels_tsv(&std::fs::read_to_string(p)?)? {
            if let Some(&i) = index.get(&id) {
                records[i].label = Some(label);
            }
        }
    }
    if let Some(p) = paths.coords {
        for (id, pts) in parse_coords_tsv(&std::fs::read_to_string(p)?)? {
            if let Some(&i) = index.get(&id) {
                records[i].contacts = Some(contacts_from_coordinates(&pts, CONTACT_THRESHOLD)?);
                records[i].coords = Some(pts);
            }
        }
    }
    if let Some(p) = paths.ss {
        for (id, ls) in parse_position_labels_tsv(&std::fs::read_to_string(p)?)? {
            if let Some(&i) = index.get(&id) {
                let ss = ls
                    .iter()
                    .map(|s| ss_class_from_str(s).ok_or_else(|| Error::data(format!("{id}: bad SS label {s:?}"))))
                    .collect::<Result<Vec<u8>>>()?;
                records[i].ss = Some(ss);
            }
        }
    }
    if let Some(p) = paths.tm {
        for (id, ls) in parse_position_labels_tsv(&std::fs::read_to_string(p)?)? {
            if let Some(&i) = index.get(&id) {
                let kinds = ls
                    .iter()
                    .map(|s| {
                        let mut cs = s.chars();
                        match (cs.next().and_then(RegionKind::from_letter), cs.next()) {
                            (Some(k), None) => Ok(k),
                            _ => Err(Error::data(format!("{id}: bad region label {s:?}"))),
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                records[i].regions = Some(regions_from_labels(&kinds));
            }
        }
    }
    for r in &records {
        r.validate()?;
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fasta(s: &str) -> Result<Vec<(String, String)>> {
        parse_fasta(s.as_bytes())
    }

    fn pair(a: &str, b: &str) -> (String, String) {
        (a.to_string(), b.to_string())
    }

    #[test]
    fn single_record() {
        assert_eq!(fasta(">p1\nACD").unwrap(), vec![pair("p1", "ACD")]);
    }

    #[test]
    fn wrapped_lines_concatenate() {
        assert_eq!(
            fasta(">p1\nAC\nDE\n>p2\nGG").unwrap(),
            vec![pair("p1", "ACDE"), pair("p2", "GG")]
        );
    }

    #[test]
    fn empty_input() {
        assert!(fasta("").unwrap().is_empty());
    }

    #[test]
    fn header_description_and_comments() {
        let recs = fasta("# comment\n>p1 some description\nA C\n\n").unwrap();
        assert_eq!(recs, vec![pair("p1", "AC")]);
    }

    #[test]
    fn data_before_header_is_error() {
        assert!(matches!(fasta("ACD\n>p1\nA"), Err(Error::Format { line: 1, .. })));
    }

    #[test]
    fn empty_record_is_error() {
        assert!(matches!(fasta(">p1\n>p2\nAC"), Err(Error::Format { line: 1, .. })));
        assert!(fasta(">p1\nAC\n>p2\n").is_err());
    }

    #[test]
    fn fasta_writer_round_trips() {
        let recs = vec![pair("a", &"ACDEFGHIKL".repeat(7)), pair("b", "W")];
        assert_eq!(fasta(&write_fasta(&recs)).unwrap(), recs);
    }

    #[test]
    fn coords_require_dense_positions() {
        let ok = "p\t0\t0\t0\t0\np\t1\t1.5\t0\t0\n";
        let m = parse_coords_tsv(ok).unwrap();
        assert_eq!(m["p"], vec![[0.0, 0.0, 0.0], [1.5, 0.0, 0.0]]);
        assert!(parse_coords_tsv("p\t1\t0\t0\t0\n").is_err());
        assert!(parse_coords_tsv("p\t0\t0\t0\n").is_err());
        assert!(parse_coords_tsv("p\t0\t0\t0\t0\np\t0\t0\t0\t0\n").is_err());
    }

    #[test]
    fn labels_table() {
        let t = "# id\tlabel\np1\ta.1.2.3\n";
        let l = parse_labels_tsv(t).unwrap();
        assert_eq!(l[0].1, HierarchyLabel::new("a", "1", "2", "3"));
        assert_eq!(parse_labels_tsv(&write_labels_tsv(&l)).unwrap(), l);
    }

    #[test]
    fn embeddings_round_trip_exactly() {
        let z = Tensor::from_rows(&[vec![0.1, -2.5e-17], vec![1.0 / 3.0, 7.0]]).unwrap();
        let items = vec![("a".to_string(), z), ("b".to_string(), Tensor::from_rows(&[vec![0.0, 1.0]]).unwrap())];
        assert_eq!(parse_embeddings(&write_embeddings(&items)).unwrap(), items);
    }

    #[test]
    fn malformed_embeddings() {
        assert!(parse_embeddings("1\t2\n").is_err());
        assert!(parse_embeddings(">a\n1\t2\n3\n").is_err());
        assert!(parse_embeddings(">a\n>b\n1\n").is_err());
        assert!(parse_embeddings(">a\n1\tx\n").is_err());
    }
}
