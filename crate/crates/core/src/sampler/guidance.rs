//! Shape guidance on predicted positions and pocket guidance on sampled ones.

use std::collections::BTreeMap;

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::SamplerError;
use crate::chem::{Element, Molecule, Vec3};

/// Points drawn around the condition atoms; the shape target of guidance.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidancePoints {
    pub points: Vec<Vec3>,
}

impl GuidancePoints {
    /// `per_atom` draws from `N(x_i, phi I)` for every atom of `cond` (`phi` is a variance).
    pub fn sample(cond: &Molecule, per_atom: usize, phi: f64, rng: &mut impl Rng) -> Self {
        let sd = phi.sqrt();
        let points = cond
            .atoms
            .iter()
            .flat_map(|a| {
                (0..per_atom)
                    .map(|_| a.position + Vec3::from_fn(|_, _| StandardNormal.sample(&mut *rng)) * sd)
                    .collect::<Vec<_>>()
            })
            .collect();
        GuidancePoints { points }
    }

    /// The `k` nearest points to `x` with their distances, nearest first.
    pub fn nearest(&self, x: &Vec3, k: usize) -> Vec<(f64, Vec3)> {
        let mut d: Vec<(f64, Vec3)> = self.points.iter().map(|p| ((p - x).norm(), *p)).collect();
        let k = k.min(d.len());
        if k < d.len() {
            d.select_nth_unstable_by(k, |a, b| a.0.total_cmp(&b.0));
            d.truncate(k);
        }
        d.sort_by(|a, b| a.0.total_cmp(&b.0));
        d
    }

    /// Mean distance from each atom to its nearest guidance point.
    pub fn mean_distance(&self, x: &[Vec3]) -> f64 {
        x.iter().map(|p| self.nearest(p, 1)[0].0).sum::<f64>() / x.len() as f64
    }
}

/// Mean of the `k` nearest guidance points when their mean distance to `x` exceeds `gamma`.
fn guidance_target(x: &Vec3, q: &GuidancePoints, gamma: f64, k: usize) -> Option<Vec3> {
    let nn = q.nearest(x, k);
    if nn.is_empty() {
        return None;
    }
    let kk = nn.len() as f64;
    let mean_d = nn.iter().map(|(d, _)| d).sum::<f64>() / kk;
    (mean_d > gamma).then(|| nn.iter().fold(Vec3::zeros(), |acc, (_, p)| acc + p) / kk)
}

/// `(1 - sigma) x + sigma mean(N_k(x))` when the mean neighbour distance exceeds `gamma`.
pub fn shape_guide_point(x: &Vec3, q: &GuidancePoints, gamma: f64, k: usize, sigma: f64) -> Option<Vec3> {
    guidance_target(x, q, gamma, k).map(|c| x * (1.0 - sigma) + c * sigma)
}

/// Applies shape guidance in place, drawing `sigma` for every moved atom.
/// Returns the indices of the moved atoms.
pub fn shape_guide(
    x: &mut [Vec3],
    q: &GuidancePoints,
    gamma: f64,
    k: usize,
    sigma_range: (f64, f64),
    rng: &mut impl Rng,
) -> Vec<usize> {
    let mut moved = Vec::new();
    for (i, p) in x.iter_mut().enumerate() {
        if let Some(c) = guidance_target(p, q, gamma, k) {
            let sigma = draw_in(sigma_range, rng);
            *p = *p * (1.0 - sigma) + c * sigma;
            moved.push(i);
        }
    }
    moved
}

fn draw_in((lo, hi): (f64, f64), rng: &mut impl Rng) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Clash thresholds keyed by (pocket element symbol, ligand element).
#[derive(Debug, Clone, PartialEq)]
pub struct RhoTable {
    pub pairs: BTreeMap<(String, Element), f64>,
    pub fallback: f64,
}

pub const RHO_HEADER: &str = "shapediff-rho v1";
pub const RHO_FALLBACK: f64 = 2.0;

const BUNDLED_COMPLEXES: [(&str, &str); 2] = [
    (
        include_str!("../../data/fixtures/complex_1.pdb"),
        include_str!("../../data/fixtures/complex_1.sdf"),
    ),
    (
        include_str!("../../data/fixtures/complex_2.pdb"),
        include_str!("../../data/fixtures/complex_2.sdf"),
    ),
];

/// Per-pair minima measured on the bundled mini-complexes, 2.0 A for unseen pairs.
impl Default for RhoTable {
    fn default() -> Self {
        let parsed: Vec<(Vec<PocketAtom>, Molecule)> = BUNDLED_COMPLEXES
            .iter()
            .map(|(pdb, sdf)| {
                let pocket = parse_pdb_lite(pdb).expect("bundled pocket parses");
                let lig = crate::chem::parse_sdf(sdf).expect("bundled ligand parses").remove(0);
                (pocket, lig)
            })
            .collect();
        RhoTable::from_complexes(parsed.iter().map(|(p, l)| (p.as_slice(), l)))
    }
}

impl RhoTable {
    pub fn scalar(rho: f64) -> Self {
        RhoTable {
            pairs: BTreeMap::new(),
            fallback: rho,
        }
    }

    pub fn get(&self, pocket: &str, ligand: Element) -> f64 {
        self.pairs
            .get(&(pocket.to_ascii_uppercase(), ligand))
            .copied()
            .unwrap_or(self.fallback)
    }

    /// Minimum observed distance for every (pocket, ligand) element pair across complexes.
    pub fn from_complexes<'a>(complexes: impl IntoIterator<Item = (&'a [PocketAtom], &'a Molecule)>) -> Self {
        let mut pairs: BTreeMap<(String, Element), f64> = BTreeMap::new();
        for (pocket, lig) in complexes {
            for pa in pocket {
                for la in &lig.atoms {
                    let d = (pa.position - la.position).norm();
                    let e = pairs.entry((pa.symbol.clone(), la.element)).or_insert(f64::INFINITY);
                    *e = e.min(d);
                }
            }
        }
        pairs.retain(|_, d| d.is_finite() && *d > 0.0);
        RhoTable {
            pairs,
            fallback: RHO_FALLBACK,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{RHO_HEADER}\nfallback {:.4}\n", self.fallback);
        for ((p, l), d) in &self.pairs {
            s.push_str(&format!("rho {p} {} {d:.4}\n", l.symbol()));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, SamplerError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == RHO_HEADER => {}
            _ => return Err(SamplerError::Format("missing rho table header".into())),
        }
        let mut t = RhoTable::scalar(RHO_FALLBACK);
        for (no, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = || SamplerError::Format(format!("rho table line {}: {line:?}", no + 1));
            match f.as_slice() {
                [] => {}
                ["fallback", v] => t.fallback = v.parse().map_err(|_| bad())?,
                ["rho", p, l, v] => {
                    let e: Element = l.parse().map_err(|_| bad())?;
                    let d: f64 = v.parse().map_err(|_| bad())?;
                    t.pairs.insert((p.to_ascii_uppercase(), e), d);
                }
                _ => return Err(bad()),
            }
        }
        if t.fallback <= 0.0 || t.pairs.values().any(|&d| d <= 0.0 || !d.is_finite()) {
            return Err(SamplerError::Format("rho thresholds must be positive".into()));
        }
        Ok(t)
    }
}

/// One pocket atom. Symbols are kept as written so metals and other
/// elements outside the ligand alphabet still take part.
#[derive(Debug, Clone, PartialEq)]
pub struct PocketAtom {
    pub symbol: String,
    pub position: Vec3,
}

/// Reads `ATOM`/`HETATM` records: coordinates from columns 31-54, the element
/// from columns 77-78 or, failing that, the first letters of the atom name.
pub fn parse_pdb_lite(text: &str) -> Result<Vec<PocketAtom>, SamplerError> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        if !(line.starts_with("ATOM") || line.starts_with("HETATM")) {
            continue;
        }
        let col = |a: usize, b: usize| line.get(a..b.min(line.len())).unwrap_or("").trim();
        let coord = |a, b| {
            col(a, b)
                .parse::<f64>()
                .map_err(|_| SamplerError::Format(format!("line {}: bad coordinate {:?}", no + 1, col(a, b))))
        };
        let position = Vec3::new(coord(30, 38)?, coord(38, 46)?, coord(46, 54)?);
        let mut symbol = col(76, 78).to_string();
        if symbol.is_empty() {
            symbol = col(12, 16).chars().filter(|c| c.is_ascii_alphabetic()).take(1).collect();
        }
        if symbol.is_empty() {
            return Err(SamplerError::Format(format!("line {}: no element", no + 1)));
        }
        out.push(PocketAtom {
            symbol: symbol.to_ascii_uppercase(),
            position,
        });
    }
    if out.is_empty() {
        return Err(SamplerError::Format("no ATOM or HETATM records".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PocketModel {
    pub atoms: Vec<PocketAtom>,
    pub rho: RhoTable,
    pub epsilon_range: (f64, f64),
    /// Pocket neighbours checked per ligand atom.
    pub k: usize,
}

impl PocketModel {
    pub fn translated(&self, shift: Vec3) -> PocketModel {
        let mut p = self.clone();
        for a in &mut p.atoms {
            a.position += shift;
        }
        p
    }

    fn nearest(&self, x: &Vec3) -> Vec<(f64, usize)> {
        let mut d: Vec<(f64, usize)> = self.atoms.iter().enumerate().map(|(i, a)| ((a.position - x).norm(), i)).collect();
        let k = self.k.min(d.len());
        if k < d.len() {
            d.select_nth_unstable_by(k, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.truncate(k);
        }
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d
    }

    /// Violated `(pocket atom, threshold)` pairs among the `k` nearest pocket atoms of `x`.
    pub fn violations(&self, x: &Vec3, ligand: Element) -> Vec<(usize, f64, f64)> {
        self.nearest(x)
            .into_iter()
            .filter_map(|(d, i)| {
                let rho = self.rho.get(&self.atoms[i].symbol, ligand);
                (d < rho).then_some((i, d, rho))
            })
            .collect()
    }
}

/// `x + (x - z)/d (rho - d + eps)` against the nearest violating pocket atom `z`.
/// A coincident atom moves along a random direction to distance `rho + eps`.
pub fn pocket_guide_point(x: &Vec3, z: &Vec3, rho: f64, eps: f64, rng: &mut impl Rng) -> Vec3 {
    let diff = x - z;
    let d = diff.norm();
    if d < 1e-12 {
        warn!("ligand atom coincides with a pocket atom; pushing in a random direction");
        let u = loop {
            let v = Vec3::from_fn(|_, _| StandardNormal.sample(&mut *rng));
            let n = v.norm();
            if n > 1e-12 {
                break v / n;
            }
        };
        return z + u * (rho + eps);
    }
    x + diff / d * (rho - d + eps)
}

/// Applies pocket guidance in place; returns the indices of moved atoms.
pub fn pocket_guide(x: &mut [Vec3], elements: &[Element], pocket: &PocketModel, rng: &mut impl Rng) -> Vec<usize> {
    let mut moved = Vec::new();
    for (i, (p, &e)) in x.iter_mut().zip(elements).enumerate() {
        let v = pocket.violations(p, e);
        if let Some(&(zi, _, rho)) = v.first() {
            let eps = draw_in(pocket.epsilon_range, rng);
            *p = pocket_guide_point(p, &pocket.atoms[zi].position, rho, eps, rng);
            moved.push(i);
        }
    }
    moved
}
