use super::element::AtomClass;
use super::molecule::{Bond, BondOrder};
use super::tables::{BondLengthTable, ValencyTable};
use super::Vec3;

struct Candidate {
    bond: Bond,
    deviation: f64,
}

fn candidate_orders(a: AtomClass, b: AtomClass) -> &'static [BondOrder] {
    if a.aromatic() && b.aromatic() {
        &[BondOrder::Aromatic, BondOrder::Single]
    } else {
        &[BondOrder::Double, BondOrder::Single]
    }
}

/// Infers bonds from interatomic distances.
///
/// A pair is bonded when its distance falls inside an interval of the table.
/// Aromatic intervals only apply between two aromatic atoms. When several
/// intervals contain the distance, the one whose midpoint is closest wins, the
/// higher order on ties. Atoms left above their maximum valence lose their
/// bond with the largest deviation from its midpoint until none are over.
pub fn assign_bonds(
    positions: &[Vec3],
    classes: &[AtomClass],
    lengths: &BondLengthTable,
    valency: &ValencyTable,
) -> Vec<Bond> {
    assert_eq!(positions.len(), classes.len(), "positions and classes differ in length");
    let n = positions.len();
    let mut cands: Vec<Candidate> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let d = (positions[i] - positions[j]).norm();
            let (ei, ej) = (classes[i].element(), classes[j].element());
            let mut best: Option<(f64, BondOrder)> = None;
            for &o in candidate_orders(classes[i], classes[j]) {
                let Some((lo, hi)) = lengths.get(ei, ej, o) else {
                    continue;
                };
                if d < lo || d > hi {
                    continue;
                }
                let dev = (d - 0.5 * (lo + hi)).abs();
                // Orders are listed high to low, so strict < keeps the higher one on ties.
                if best.is_none_or(|(b, _)| dev < b) {
                    best = Some((dev, o));
                }
            }
            if let Some((deviation, order)) = best {
                cands.push(Candidate {
                    bond: Bond::new(i, j, order),
                    deviation,
                });
            }
        }
    }

    let mut load = vec![0.0; n];
    for c in &cands {
        load[c.bond.i] += c.bond.order.valence();
        load[c.bond.j] += c.bond.order.valence();
    }
    let over = |load: &[f64], a: usize| load[a].round() > valency.max_valence(classes[a].element()) as f64;
    loop {
        let worst = cands
            .iter()
            .enumerate()
            .filter(|(_, c)| over(&load, c.bond.i) || over(&load, c.bond.j))
            .max_by(|(_, a), (_, b)| a.deviation.total_cmp(&b.deviation))
            .map(|(k, _)| k);
        let Some(k) = worst else { break };
        let c = cands.remove(k);
        load[c.bond.i] -= c.bond.order.valence();
        load[c.bond.j] -= c.bond.order.valence();
    }
    cands.into_iter().map(|c| c.bond).collect()
}
