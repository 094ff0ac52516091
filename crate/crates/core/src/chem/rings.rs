//! Ring enumeration and a smallest-set-of-smallest-rings approximation.

use std::collections::HashMap;

use super::molecule::{BondOrder, Molecule};

/// Largest ring size the enumerator looks for.
pub const MAX_RING_SIZE: usize = 8;

/// All simple cycles of length 3..=`max_len`, each as an atom list starting at
/// its smallest index and oriented so that the second atom is smaller than the last.
pub fn simple_cycles(adj: &[Vec<usize>], max_len: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut path = Vec::with_capacity(max_len);
    let mut on_path = vec![false; adj.len()];
    for start in 0..adj.len() {
        path.clear();
        path.push(start);
        on_path[start] = true;
        extend(adj, start, max_len, &mut path, &mut on_path, &mut out);
        on_path[start] = false;
    }
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    out
}

fn extend(
    adj: &[Vec<usize>],
    start: usize,
    max_len: usize,
    path: &mut Vec<usize>,
    on_path: &mut [bool],
    out: &mut Vec<Vec<usize>>,
) {
    let last = *path.last().unwrap();
    for &next in &adj[last] {
        if next == start && path.len() >= 3 && path[1] < last {
            out.push(path.clone());
        }
        if next > start && !on_path[next] && path.len() < max_len {
            path.push(next);
            on_path[next] = true;
            extend(adj, start, max_len, path, on_path, out);
            on_path[next] = false;
            path.pop();
        }
    }
}

fn plain_adjacency(m: &Molecule) -> Vec<Vec<usize>> {
    m.adjacency()
        .into_iter()
        .map(|l| l.into_iter().map(|(j, _)| j).collect())
        .collect()
}

fn connected_components(adj: &[Vec<usize>]) -> usize {
    let mut seen = vec![false; adj.len()];
    let mut count = 0;
    for s in 0..adj.len() {
        if seen[s] {
            continue;
        }
        count += 1;
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
    }
    count
}

/// Smallest set of smallest rings, built greedily from short cycles with a
/// GF(2) independence test over bond incidence vectors.
pub fn sssr(m: &Molecule) -> Vec<Vec<usize>> {
    let adj = plain_adjacency(m);
    let n_edges = m.bonds.len();
    let rank = (n_edges + connected_components(&adj)).saturating_sub(m.atoms.len());
    if rank == 0 {
        return Vec::new();
    }
    let edge_index: HashMap<(usize, usize), usize> =
        m.bonds.iter().enumerate().map(|(k, b)| (b.key(), k)).collect();
    let words = n_edges.div_ceil(64);
    // Reduced basis rows keyed by pivot bit.
    let mut basis: Vec<(usize, Vec<u64>)> = Vec::new();
    let mut rings = Vec::new();
    for cycle in simple_cycles(&adj, MAX_RING_SIZE) {
        let mut bits = vec![0u64; words];
        for k in 0..cycle.len() {
            let a = cycle[k];
            let b = cycle[(k + 1) % cycle.len()];
            let e = edge_index[&(a.min(b), a.max(b))];
            bits[e / 64] ^= 1 << (e % 64);
        }
        for (pivot, row) in &basis {
            if bits[pivot / 64] >> (pivot % 64) & 1 == 1 {
                for (x, y) in bits.iter_mut().zip(row) {
                    *x ^= y;
                }
            }
        }
        if let Some(pivot) = (0..n_edges).find(|&e| bits[e / 64] >> (e % 64) & 1 == 1) {
            basis.push((pivot, bits));
            rings.push(cycle);
            if rings.len() == rank {
                break;
            }
        }
    }
    rings
}

/// Marks conjugated six-membered carbocycles and heterocycles as aromatic,
/// rewriting their bonds to [`BondOrder::Aromatic`] and flagging the atoms.
///
/// A six-ring qualifies when every member either already carries an aromatic
/// bond or has exactly one double bond whose partner belongs to a qualifying
/// six-ring. The condition is iterated to a fixpoint so fused systems such as
/// naphthalene are recognised whichever Kekule form the input uses.
/// Atoms touching an aromatic bond are flagged as well.
pub fn perceive_aromaticity(m: &mut Molecule) {
    let adj = m.adjacency();
    let mut rings: Vec<Vec<usize>> = simple_cycles(&plain_adjacency(m), 6)
        .into_iter()
        .filter(|c| c.len() == 6)
        .filter(|c| c.iter().all(|&a| m.atoms[a].element.can_be_aromatic()))
        .filter(|c| (0..6).all(|k| m.bond_order(c[k], c[(k + 1) % 6]) != BondOrder::None))
        .collect();
    loop {
        let mut member = vec![false; m.atoms.len()];
        for r in &rings {
            for &a in r {
                member[a] = true;
            }
        }
        let conjugated = |a: usize| {
            let bonds = &adj[a];
            if bonds.iter().any(|&(_, o)| o == BondOrder::Aromatic) {
                return true;
            }
            let doubles: Vec<usize> = bonds.iter().filter(|&&(_, o)| o == BondOrder::Double).map(|&(b, _)| b).collect();
            doubles.len() == 1 && member[doubles[0]]
        };
        let before = rings.len();
        rings.retain(|r| r.iter().all(|&a| conjugated(a)));
        if rings.len() == before {
            break;
        }
    }
    for ring in rings {
        for k in 0..6 {
            let key = (ring[k].min(ring[(k + 1) % 6]), ring[k].max(ring[(k + 1) % 6]));
            if let Some(b) = m.bonds.iter_mut().find(|b| b.key() == key) {
                b.order = BondOrder::Aromatic;
            }
        }
    }
    let flagged: Vec<usize> = m
        .bonds
        .iter()
        .filter(|b| b.order == BondOrder::Aromatic)
        .flat_map(|b| [b.i, b.j])
        .collect();
    for a in flagged {
        if m.atoms[a].element.can_be_aromatic() {
            m.atoms[a].aromatic = true;
        }
    }
}
