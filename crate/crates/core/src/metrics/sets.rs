//! Set-level scores: desirable rate, diversity, novelty and valency stability.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fingerprint::{canonical_hash, fingerprint};
use super::shape_sim::shape_similarity;
use super::MetricsError;
use crate::chem::{Molecule, ValencyTable};

pub const SHAPE_THRESHOLD: f64 = 0.8;
pub const INDEX_MAGIC: &[u8; 4] = b"SDNX";
pub const INDEX_VERSION: u16 = 1;

/// Sorted canonical hashes of a reference corpus.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NoveltyIndex {
    hashes: Vec<u64>,
}

impl NoveltyIndex {
    pub fn build(corpus: &[Molecule]) -> Self {
        let mut hashes: Vec<u64> = corpus.par_iter().map(canonical_hash).collect();
        hashes.sort_unstable();
        hashes.dedup();
        NoveltyIndex { hashes }
    }

    pub fn len(&self) -> usize {
        self.hashes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hashes.is_empty()
    }

    pub fn contains(&self, m: &Molecule) -> bool {
        self.hashes.binary_search(&canonical_hash(m)).is_ok()
    }

    /// `SDNX`, u16 version, u64 count, then the sorted hashes, all little-endian.
    pub fn write(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(INDEX_MAGIC)?;
        w.write_all(&INDEX_VERSION.to_le_bytes())?;
        w.write_all(&(self.hashes.len() as u64).to_le_bytes())?;
        for h in &self.hashes {
            w.write_all(&h.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self, MetricsError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != INDEX_MAGIC {
            return Err(MetricsError::Index(format!("bad magic {magic:?}")));
        }
        let mut v = [0u8; 2];
        r.read_exact(&mut v)?;
        let version = u16::from_le_bytes(v);
        if version != INDEX_VERSION {
            return Err(MetricsError::Index(format!("unsupported index version {version}")));
        }
        let mut n = [0u8; 8];
        r.read_exact(&mut n)?;
        let n = u64::from_le_bytes(n) as usize;
        let mut hashes = Vec::with_capacity(n.min(1 << 24));
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            hashes.push(u64::from_le_bytes(buf));
        }
        if hashes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MetricsError::Index("hashes are not strictly sorted".into()));
        }
        Ok(NoveltyIndex { hashes })
    }
}

/// Pairwise scores of one generated molecule against its condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    pub shape: f64,
    pub graph: f64,
}

pub fn score_against(cond: &Molecule, generated: &[Molecule]) -> Vec<PairScores> {
    let fc = fingerprint(cond);
    generated
        .par_iter()
        .map(|m| PairScores {
            shape: shape_similarity(cond, m),
            graph: fc.tanimoto(&fingerprint(m)),
        })
        .collect()
}

pub fn is_desirable(s: &PairScores, delta_g: f64) -> bool {
    s.shape > SHAPE_THRESHOLD && s.graph <= delta_g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesirableReport {
    pub total: usize,
    pub desirable: usize,
    /// Percentage of generated molecules that are desirable.
    pub desirable_pct: f64,
    /// `1 - mean pairwise graph similarity` over desirable molecules; `None` with fewer than two.
    pub diversity: Option<f64>,
    /// Percentage of desirable molecules absent from the reference index; `None` with none desirable.
    pub novelty: Option<f64>,
    pub mean_shape: f64,
    pub mean_graph: f64,
}

/// Pairwise `1 - mean Tanimoto`; `None` for fewer than two molecules.
pub fn diversity(mols: &[&Molecule]) -> Option<f64> {
    if mols.len() < 2 {
        return None;
    }
    let fps: Vec<_> = mols.iter().map(|m| fingerprint(m)).collect();
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..fps.len() {
        for j in i + 1..fps.len() {
            sum += fps[i].tanimoto(&fps[j]);
            pairs += 1;
        }
    }
    Some(1.0 - sum / pairs as f64)
}

pub fn desirable_from_scores(generated: &[Molecule], scores: &[PairScores], delta_g: f64, index: Option<&NoveltyIndex>) -> DesirableReport {
    let keep: Vec<&Molecule> = generated
        .iter()
        .zip(scores)
        .filter(|(_, s)| is_desirable(s, delta_g))
        .map(|(m, _)| m)
        .collect();
    let total = generated.len();
    let pct = |k: usize, of: usize| 100.0 * k as f64 / of as f64;
    let novelty = match (keep.is_empty(), index) {
        (false, Some(ix)) => Some(pct(keep.iter().filter(|m| !ix.contains(m)).count(), keep.len())),
        (false, None) => Some(100.0),
        (true, _) => None,
    };
    let mean = |f: fn(&PairScores) -> f64| if total == 0 { 0.0 } else { scores.iter().map(f).sum::<f64>() / total as f64 };
    DesirableReport {
        total,
        desirable: keep.len(),
        desirable_pct: if total == 0 { 0.0 } else { pct(keep.len(), total) },
        diversity: diversity(&keep),
        novelty,
        mean_shape: mean(|s| s.shape),
        mean_graph: mean(|s| s.graph),
    }
}

pub fn desirable_rate(cond: &Molecule, generated: &[Molecule], delta_g: f64, index: Option<&NoveltyIndex>) -> DesirableReport {
    let scores = score_against(cond, generated);
    desirable_from_scores(generated, &scores, delta_g, index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stability {
    pub stable_atoms: usize,
    pub atoms: usize,
    pub molecule_stable: bool,
}

impl Stability {
    pub fn atom_fraction(&self) -> f64 {
        if self.atoms == 0 {
            return 0.0;
        }
        self.stable_atoms as f64 / self.atoms as f64
    }
}

/// An atom is stable when its rounded bond valence (aromatic 1.5) is allowed for its element.
pub fn stability(m: &Molecule, table: &ValencyTable) -> Stability {
    let stable_atoms = m
        .valences()
        .iter()
        .zip(&m.atoms)
        .filter(|(v, a)| table.is_allowed(a.element, **v))
        .count();
    Stability {
        stable_atoms,
        atoms: m.atoms.len(),
        molecule_stable: stable_atoms == m.atoms.len(),
    }
}

/// `(atom stability, molecule stability)` over a set.
pub fn stability_rates(mols: &[Molecule], table: &ValencyTable) -> (f64, f64) {
    if mols.is_empty() {
        return (0.0, 0.0);
    }
    let (sa, na, sm) = mols
        .par_iter()
        .map(|m| {
            let s = stability(m, table);
            (s.stable_atoms, s.atoms, s.molecule_stable as usize)
        })
        .reduce(|| (0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    (sa as f64 / na.max(1) as f64, sm as f64 / mols.len() as f64)
}
