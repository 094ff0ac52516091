//! Histograms of bond geometry and ring statistics, compared by Jensen-Shannon divergence.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::chem::rings::sssr;
use crate::chem::{BondOrder, Molecule, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<f64>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Histogram {
            lo,
            hi,
            counts: vec![0.0; bins],
        }
    }

    /// Adds `x`, clamping values on or outside the edges into the end bins.
    pub fn add(&mut self, x: f64) {
        let n = self.counts.len();
        let f = (x - self.lo) / (self.hi - self.lo) * n as f64;
        let b = if f.is_nan() { 0 } else { (f.floor().max(0.0) as usize).min(n - 1) };
        self.counts[b] += 1.0;
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0.0
    }

    /// Probabilities, or `None` when nothing was counted.
    pub fn normalized(&self) -> Option<Vec<f64>> {
        let t = self.total();
        (t > 0.0).then(|| self.counts.iter().map(|c| c / t).collect())
    }

    fn merge(mut self, other: &Histogram) -> Self {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self
    }

    fn same_binning(&self, other: &Histogram) -> bool {
        self.lo == other.lo && self.hi == other.hi && self.counts.len() == other.counts.len()
    }
}

/// Base-2 Jensen-Shannon divergence of two probability vectors.
pub fn js_divergence_probs(p: &[f64], q: &[f64]) -> Result<f64, MetricsError> {
    if p.len() != q.len() {
        return Err(MetricsError::BinningMismatch(format!("{} vs {} bins", p.len(), q.len())));
    }
    let term = |a: f64, m: f64| if a > 0.0 { a * (a / m).log2() } else { 0.0 };
    let mut js = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        js += 0.5 * term(a, m) + 0.5 * term(b, m);
    }
    Ok(js.clamp(0.0, 1.0))
}

/// JS divergence of two histograms; `None` when either is empty.
pub fn js_divergence(p: &Histogram, q: &Histogram) -> Result<Option<f64>, MetricsError> {
    if !p.same_binning(q) {
        return Err(MetricsError::BinningMismatch(format!(
            "[{}, {}) x {} vs [{}, {}) x {}",
            p.lo,
            p.hi,
            p.counts.len(),
            q.lo,
            q.hi,
            q.counts.len()
        )));
    }
    match (p.normalized(), q.normalized()) {
        (Some(a), Some(b)) => js_divergence_probs(&a, &b).map(Some),
        _ => Ok(None),
    }
}

/// Ring type: size, sorted element symbols and whether every atom is aromatic.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RingType {
    pub size: usize,
    pub elements: Vec<String>,
    pub aromatic: bool,
}

impl RingType {
    pub fn of(m: &Molecule, ring: &[usize]) -> Self {
        let mut elements: Vec<String> = ring.iter().map(|&i| m.atoms[i].element.symbol().to_string()).collect();
        elements.sort();
        RingType {
            size: ring.len(),
            elements,
            aromatic: ring.iter().all(|&i| m.atoms[i].aromatic),
        }
    }
}

pub const MIN_RING: usize = 3;
pub const MAX_RING: usize = 8;
pub const MAX_BONDS_PER_ATOM: usize = 6;
pub const MAX_RINGS_PER_MOLECULE: usize = 8;
const BOND_TYPES: [BondOrder; 3] = [BondOrder::Single, BondOrder::Double, BondOrder::Aromatic];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryHistograms {
    pub bond_lengths: Histogram,
    pub bond_angles: Histogram,
    pub dihedrals: Histogram,
    pub bonds_per_atom: Histogram,
    pub bond_types: Histogram,
    pub ring_counts: Histogram,
    pub ring_sizes: Histogram,
    pub ring_types: BTreeMap<RingType, usize>,
    pub molecules: usize,
}

impl GeometryHistograms {
    pub fn empty() -> Self {
        GeometryHistograms {
            bond_lengths: Histogram::new(0.0, 3.0, 60),
            bond_angles: Histogram::new(0.0, 180.0, 36),
            dihedrals: Histogram::new(-180.0, 180.0, 36),
            bonds_per_atom: Histogram::new(0.0, (MAX_BONDS_PER_ATOM + 1) as f64, MAX_BONDS_PER_ATOM + 1),
            bond_types: Histogram::new(0.0, BOND_TYPES.len() as f64, BOND_TYPES.len()),
            ring_counts: Histogram::new(0.0, (MAX_RINGS_PER_MOLECULE + 1) as f64, MAX_RINGS_PER_MOLECULE + 1),
            ring_sizes: Histogram::new(MIN_RING as f64, (MAX_RING + 1) as f64, MAX_RING - MIN_RING + 1),
            ring_types: BTreeMap::new(),
            molecules: 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.molecules == 0
    }

    pub fn of_molecule(m: &Molecule) -> Self {
        let mut h = Self::empty();
        h.molecules = 1;
        let pos = m.positions();
        let adj = m.adjacency();
        for b in &m.bonds {
            h.bond_lengths.add((pos[b.i] - pos[b.j]).norm());
            if let Some(k) = BOND_TYPES.iter().position(|&o| o == b.order) {
                h.bond_types.add(k as f64);
            }
        }
        for (j, nb) in adj.iter().enumerate() {
            h.bonds_per_atom.add(nb.len() as f64);
            for (x, &(i, _)) in nb.iter().enumerate() {
                for &(k, _) in &nb[x + 1..] {
                    h.bond_angles.add(angle(&pos[i], &pos[j], &pos[k]));
                }
            }
        }
        for b in &m.bonds {
            let (j, k) = (b.i, b.j);
            for &(i, _) in &adj[j] {
                for &(l, _) in &adj[k] {
                    if i != k && l != j && i != l {
                        h.dihedrals.add(dihedral(&pos[i], &pos[j], &pos[k], &pos[l]));
                    }
                }
            }
        }
        let rings = sssr(m);
        h.ring_counts.add(rings.len() as f64);
        for r in &rings {
            h.ring_sizes.add(r.len() as f64);
            *h.ring_types.entry(RingType::of(m, r)).or_insert(0) += 1;
        }
        h
    }

    pub fn merge(self, other: &GeometryHistograms) -> Self {
        let mut ring_types = self.ring_types;
        for (k, v) in &other.ring_types {
            *ring_types.entry(k.clone()).or_insert(0) += v;
        }
        GeometryHistograms {
            bond_lengths: self.bond_lengths.merge(&other.bond_lengths),
            bond_angles: self.bond_angles.merge(&other.bond_angles),
            dihedrals: self.dihedrals.merge(&other.dihedrals),
            bonds_per_atom: self.bonds_per_atom.merge(&other.bonds_per_atom),
            bond_types: self.bond_types.merge(&other.bond_types),
            ring_counts: self.ring_counts.merge(&other.ring_counts),
            ring_sizes: self.ring_sizes.merge(&other.ring_sizes),
            ring_types,
            molecules: self.molecules + other.molecules,
        }
    }

    pub fn named(&self) -> [(&'static str, &Histogram); 7] {
        [
            ("bond_lengths", &self.bond_lengths),
            ("bond_angles", &self.bond_angles),
            ("dihedrals", &self.dihedrals),
            ("bonds_per_atom", &self.bonds_per_atom),
            ("bond_types", &self.bond_types),
            ("ring_counts", &self.ring_counts),
            ("ring_sizes", &self.ring_sizes),
        ]
    }

    /// The ten most frequent ring types, ties broken by type order.
    pub fn top_ring_types(&self, n: usize) -> Vec<RingType> {
        let mut v: Vec<(&RingType, &usize)> = self.ring_types.iter().collect();
        v.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        v.into_iter().take(n).map(|(k, _)| k.clone()).collect()
    }
}

/// Angle at `b` in degrees.
pub fn angle(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let (u, v) = (a - b, c - b);
    let cos = u.dot(&v) / (u.norm() * v.norm());
    cos.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Signed torsion `a-b-c-d` in degrees, in (-180, 180].
pub fn dihedral(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> f64 {
    let (b1, b2, b3) = (b - a, c - b, d - c);
    let n1 = b1.cross(&b2);
    let n2 = b2.cross(&b3);
    let y = b2.norm() * b1.dot(&n2);
    y.atan2(n1.dot(&n2)).to_degrees()
}

pub fn geometry_stats(corpus: &[Molecule]) -> GeometryHistograms {
    corpus
        .par_iter()
        .map(GeometryHistograms::of_molecule)
        .collect::<Vec<_>>()
        .iter()
        .fold(GeometryHistograms::empty(), |acc, h| acc.merge(h))
}

/// Per-histogram JS divergence; `None` where either side is empty.
pub fn compare_geometry(a: &GeometryHistograms, b: &GeometryHistograms) -> Result<Vec<(&'static str, Option<f64>)>, MetricsError> {
    a.named()
        .iter()
        .zip(b.named())
        .map(|((name, p), (_, q))| Ok((*name, js_divergence(p, q)?)))
        .collect()
}

/// Ring types among the top ten of both corpora.
pub fn intersecting_ring_types(a: &GeometryHistograms, b: &GeometryHistograms) -> usize {
    let tb = b.top_ring_types(10);
    a.top_ring_types(10).iter().filter(|t| tb.contains(t)).count()
}
