//! Circular (ECFP-style) fingerprints, graph Tanimoto and canonical graph hashes.

use std::collections::BTreeSet;

use crate::chem::{BondOrder, Molecule};

pub const FP_BITS: usize = 2048;
pub const FP_RADIUS: usize = 2;
const WORDS: usize = FP_BITS / 64;

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn combine(h: u64, x: u64) -> u64 {
    mix64(h ^ x.wrapping_mul(0x100_0000_01b3))
}

fn hash_seq(items: impl IntoIterator<Item = u64>) -> u64 {
    items.into_iter().fold(0xcbf2_9ce4_8422_2325, combine)
}

fn bond_code(o: BondOrder) -> u64 {
    o.index() as u64
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    words: [u64; WORDS],
}

impl Fingerprint {
    pub fn empty() -> Self {
        Fingerprint { words: [0; WORDS] }
    }

    pub fn set(&mut self, bit: usize) {
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn count(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn on_bits(&self) -> impl Iterator<Item = usize> + '_ {
        (0..FP_BITS).filter(|&b| self.get(b))
    }

    pub fn tanimoto(&self, other: &Fingerprint) -> f64 {
        let (mut inter, mut union) = (0u32, 0u32);
        for (a, b) in self.words.iter().zip(&other.words) {
            inter += (a & b).count_ones();
            union += (a | b).count_ones();
        }
        if union == 0 {
            // Two empty fingerprints describe the same (empty) substructure set.
            return 1.0;
        }
        inter as f64 / union as f64
    }
}

/// Heavy-atom invariants: element, heavy degree, aromaticity, attached hydrogens.
fn atom_seeds(m: &Molecule, heavy: &[usize], adj: &[Vec<(usize, BondOrder)>]) -> Vec<u64> {
    heavy
        .iter()
        .map(|&i| {
            let a = &m.atoms[i];
            let hs = adj[i].iter().filter(|(j, _)| m.atoms[*j].element.is_hydrogen()).count();
            let degree = adj[i].len() - hs;
            hash_seq([a.element.atomic_number() as u64, degree as u64, a.aromatic as u64, hs as u64])
        })
        .collect()
}

/// Identifiers of every distinct circular environment up to `radius`.
///
/// Environments that cover the same bond set as one already emitted are skipped.
pub fn circular_identifiers(m: &Molecule, radius: usize) -> Vec<u64> {
    let adj = m.adjacency();
    let heavy: Vec<usize> = (0..m.atoms.len()).filter(|&i| !m.atoms[i].element.is_hydrogen()).collect();
    let mut local = vec![usize::MAX; m.atoms.len()];
    for (k, &i) in heavy.iter().enumerate() {
        local[i] = k;
    }
    let bond_id = |i: usize, j: usize| -> usize {
        let key = (i.min(j), i.max(j));
        m.bonds.iter().position(|b| b.key() == key).expect("adjacent atoms share a bond")
    };
    let heavy_adj: Vec<Vec<(usize, BondOrder, usize)>> = heavy
        .iter()
        .map(|&i| {
            adj[i]
                .iter()
                .filter(|(j, _)| local[*j] != usize::MAX)
                .map(|&(j, o)| (local[j], o, bond_id(i, j)))
                .collect()
        })
        .collect();

    let mut ids = atom_seeds(m, &heavy, &adj);
    let mut envs: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); heavy.len()];
    let mut seen_envs: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut out: Vec<u64> = ids.clone();
    for r in 1..=radius {
        let mut next_ids = Vec::with_capacity(heavy.len());
        let mut next_envs = Vec::with_capacity(heavy.len());
        for a in 0..heavy.len() {
            let mut nbrs: Vec<(u64, u64)> = heavy_adj[a].iter().map(|&(j, o, _)| (bond_code(o), ids[j])).collect();
            nbrs.sort_unstable();
            let id = hash_seq(
                [r as u64, ids[a]]
                    .into_iter()
                    .chain(nbrs.iter().flat_map(|&(o, id)| [o, id])),
            );
            let mut env = envs[a].clone();
            for &(j, _, b) in &heavy_adj[a] {
                env.insert(b);
                env.extend(envs[j].iter().copied());
            }
            next_ids.push(id);
            next_envs.push(env);
        }
        // Emit in identifier order so ties between equal bond sets resolve independently of atom order.
        let mut order: Vec<usize> = (0..heavy.len()).collect();
        order.sort_by_key(|&a| next_ids[a]);
        for a in order {
            let grew = next_envs[a].len() > envs[a].len();
            if grew && seen_envs.insert(next_envs[a].iter().copied().collect()) {
                out.push(next_ids[a]);
            }
        }
        ids = next_ids;
        envs = next_envs;
    }
    out
}

pub fn fingerprint(m: &Molecule) -> Fingerprint {
    let mut fp = Fingerprint::empty();
    for id in circular_identifiers(m, FP_RADIUS) {
        fp.set((id % FP_BITS as u64) as usize);
    }
    fp
}

pub fn graph_similarity(a: &Molecule, b: &Molecule) -> f64 {
    fingerprint(a).tanimoto(&fingerprint(b))
}

/// Order-independent graph hash over all atoms (element, aromaticity) and bond orders,
/// from colour refinement run to a fixed partition.
pub fn canonical_hash(m: &Molecule) -> u64 {
    let adj = m.adjacency();
    let n = m.atoms.len();
    let mut labels: Vec<u64> = m
        .atoms
        .iter()
        .map(|a| hash_seq([a.element.atomic_number() as u64, a.aromatic as u64]))
        .collect();
    let classes = |l: &[u64]| l.iter().collect::<BTreeSet<_>>().len();
    let mut n_classes = classes(&labels);
    for _ in 0..n {
        let next: Vec<u64> = (0..n)
            .map(|i| {
                let mut nb: Vec<(u64, u64)> = adj[i].iter().map(|&(j, o)| (bond_code(o), labels[j])).collect();
                nb.sort_unstable();
                hash_seq(std::iter::once(labels[i]).chain(nb.into_iter().flat_map(|(o, l)| [o, l])))
            })
            .collect();
        let c = classes(&next);
        labels = next;
        if c == n_classes {
            break;
        }
        n_classes = c;
    }
    let mut sorted = labels;
    sorted.sort_unstable();
    hash_seq(std::iter::once(n as u64).chain(sorted).chain([m.bonds.len() as u64]))
}
