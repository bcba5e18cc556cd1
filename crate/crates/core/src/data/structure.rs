use rand::Rng;

use super::record::ContactMap;
use crate::error::{Error, Result};

pub fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Contact iff the Euclidean distance is strictly below `threshold`.
/// The diagonal is always set; consumers mask it.
pub fn contacts_from_coordinates(coords: &[[f64; 3]], threshold: f64) -> Result<ContactMap> {
    if coords.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite coordinate"));
    }
    let n = coords.len();
    let mut m = ContactMap::empty(n);
    for i in 0..n {
        for j in i..n {
            if distance(&coords[i], &coords[j]) < threshold {
                m.set(i, j, true);
            }
        }
    }
    Ok(m)
}

/// Local backbone geometry of a synthetic segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentKind {
    Helix,
    Strand,
    Coil,
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    scale(a, 1.0 / n)
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let v = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let n2: f64 = v.iter().map(|x| x * x).sum();
        if n2 > 1e-4 && n2 <= 1.0 {
            return normalize(v);
        }
    }
}

/// Orthonormal frame with `e1` along `axis`.
fn frame(axis: [f64; 3]) -> ([f64; 3], [f64; 3], [f64; 3]) {
    let e1 = normalize(axis);
    let helper = if e1[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let e2 = normalize(cross(e1, helper));
    let e3 = cross(e1, e2);
    (e1, e2, e3)
}

/// Rotates `v` toward a random perpendicular by `angle` radians.
fn turn<R: Rng + ?Sized>(v: [f64; 3], angle: f64, rng: &mut R) -> [f64; 3] {
    let (e1, e2, e3) = frame(v);
    let phi = rng.gen_range(0.0..std::f64::consts::TAU);
    let perp = add(scale(e2, phi.cos()), scale(e3, phi.sin()));
    normalize(add(scale(e1, angle.cos()), scale(perp, angle.sin())))
}

/// Builds an idealized Cα trace (3.8 Å steps) for a segment layout.
///
/// Helices use 1.5 Å rise, 2.3 Å radius and 100° per residue; strands are
/// 3.3 Å-rise zigzags; coils are persistent random walks. Successive
/// segments fold back on each other with a random turn, which creates the
/// long-range contacts.
pub fn build_backbone<R: Rng + ?Sized>(segments: &[(SegmentKind, usize)], rng: &mut R) -> Vec<[f64; 3]> {
    let mut pts: Vec<[f64; 3]> = Vec::new();
    let mut axis = random_unit(rng);
    let mut end = [0.0; 3];
    for (s, &(kind, len)) in segments.iter().enumerate() {
        if s > 0 && kind != SegmentKind::Coil {
            axis = turn(axis, rng.gen_range(2.0..2.9), rng);
        }
        let (e1, e2, e3) = frame(axis);
        let local: Vec<[f64; 3]> = match kind {
            SegmentKind::Helix => (0..len)
                .map(|k| {
                    let a = (100f64).to_radians() * k as f64;
                    add(scale(e1, 1.5 * k as f64), add(scale(e2, 2.3 * a.cos()), scale(e3, 2.3 * a.sin())))
                })
                .collect(),
            SegmentKind::Strand => (0..len)
                .map(|k| {
                    let side = if k % 2 == 0 { 0.95 } else { -0.95 };
                    add(scale(e1, 3.3 * k as f64), scale(e2, side))
                })
                .collect(),
            SegmentKind::Coil => {
                let mut dir = axis;
                let mut p = [0.0; 3];
                let mut v = Vec::with_capacity(len);
                for _ in 0..len {
                    v.push(p);
                    dir = turn(dir, rng.gen_range(0.3..1.2), rng);
                    p = add(p, scale(dir, 3.8));
                }
                axis = dir;
                v
            }
        };
        if local.is_empty() {
            continue;
        }
        let origin = if pts.is_empty() {
            [0.0; 3]
        } else {
            let step = normalize(add(scale(axis, 1.0), scale(random_unit(rng), 0.3)));
            add(end, scale(step, 3.8))
        };
        let shift = add(origin, scale(local[0], -1.0));
        for p in local {
            pts.push(add(p, shift));
        }
        end = *pts.last().unwrap_or(&end);
    }
    pts
}
