use std::collections::HashSet;

use super::element::{AtomClass, Element, NUM_ATOM_CLASSES};
use super::{ChemError, Vec3};

/// Bond type, encoded as a length-4 one-hot (none, single, double, aromatic).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    None,
    Single,
    Double,
    Aromatic,
}

pub const NUM_BOND_CLASSES: usize = 4;

impl BondOrder {
    pub const ALL: [BondOrder; 4] = [
        BondOrder::None,
        BondOrder::Single,
        BondOrder::Double,
        BondOrder::Aromatic,
    ];

    pub fn index(self) -> usize {
        match self {
            BondOrder::None => 0,
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Aromatic => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn one_hot(self) -> [f64; NUM_BOND_CLASSES] {
        let mut v = [0.0; NUM_BOND_CLASSES];
        v[self.index()] = 1.0;
        v
    }

    /// Contribution to an atom's valence; aromatic bonds count 1.5.
    pub fn valence(self) -> f64 {
        match self {
            BondOrder::None => 0.0,
            BondOrder::Single => 1.0,
            BondOrder::Double => 2.0,
            BondOrder::Aromatic => 1.5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BondOrder::None => "none",
            BondOrder::Single => "single",
            BondOrder::Double => "double",
            BondOrder::Aromatic => "aromatic",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|o| o.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub position: Vec3,
    pub element: Element,
    pub aromatic: bool,
}

impl Atom {
    pub fn new(element: Element, position: Vec3) -> Self {
        Atom {
            position,
            element,
            aromatic: false,
        }
    }

    pub fn aromatic(element: Element, position: Vec3) -> Self {
        Atom {
            position,
            element,
            aromatic: true,
        }
    }

    pub fn from_class(class: AtomClass, position: Vec3) -> Self {
        Atom {
            position,
            element: class.element(),
            aromatic: class.aromatic(),
        }
    }

    pub fn class(&self) -> AtomClass {
        AtomClass::new(self.element, self.aromatic).expect("atom validated at construction")
    }

    pub fn feature(&self) -> [f64; NUM_ATOM_CLASSES] {
        self.class().one_hot()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn new(i: usize, j: usize, order: BondOrder) -> Self {
        Bond { i, j, order }
    }

    /// Unordered atom pair, smaller index first.
    pub fn key(&self) -> (usize, usize) {
        (self.i.min(self.j), self.i.max(self.j))
    }

    pub fn other(&self, atom: usize) -> Option<usize> {
        if self.i == atom {
            Some(self.j)
        } else if self.j == atom {
            Some(self.i)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Molecule {
    pub name: String,
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
}

impl Molecule {
    /// Builds a molecule and checks its structural invariants.
    pub fn new(name: impl Into<String>, atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<Self, ChemError> {
        let m = Molecule {
            name: name.into(),
            atoms,
            bonds,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ChemError> {
        if self.atoms.is_empty() {
            return Err(ChemError::Invalid("molecule has no atoms".into()));
        }
        for (idx, a) in self.atoms.iter().enumerate() {
            if !a.position.iter().all(|c| c.is_finite()) {
                return Err(ChemError::Invalid(format!("atom {idx} has a non-finite position")));
            }
            if a.aromatic && !a.element.can_be_aromatic() {
                return Err(ChemError::InvalidAromatic(a.element));
            }
        }
        let mut seen = HashSet::new();
        for b in &self.bonds {
            if b.i == b.j {
                return Err(ChemError::Invalid(format!("self bond on atom {}", b.i)));
            }
            if b.i >= self.atoms.len() || b.j >= self.atoms.len() {
                return Err(ChemError::Invalid(format!(
                    "bond {}-{} references a missing atom",
                    b.i, b.j
                )));
            }
            if b.order == BondOrder::None {
                return Err(ChemError::Invalid(format!("bond {}-{} has order none", b.i, b.j)));
            }
            if !seen.insert(b.key()) {
                return Err(ChemError::Invalid(format!("duplicate bond {}-{}", b.i, b.j)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.atoms.iter().map(|a| a.position).collect()
    }

    pub fn classes(&self) -> Vec<AtomClass> {
        self.atoms.iter().map(Atom::class).collect()
    }

    pub fn heavy_atom_count(&self) -> usize {
        self.atoms.iter().filter(|a| !a.element.is_hydrogen()).count()
    }

    /// Adjacency lists of `(neighbour, order)`.
    pub fn adjacency(&self) -> Vec<Vec<(usize, BondOrder)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for b in &self.bonds {
            adj[b.i].push((b.j, b.order));
            adj[b.j].push((b.i, b.order));
        }
        for list in &mut adj {
            list.sort();
        }
        adj
    }

    /// Sum of bond valences at each atom, aromatic bonds counting 1.5.
    pub fn valences(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.atoms.len()];
        for b in &self.bonds {
            v[b.i] += b.order.valence();
            v[b.j] += b.order.valence();
        }
        v
    }

    pub fn bond_order(&self, i: usize, j: usize) -> BondOrder {
        let key = (i.min(j), i.max(j));
        self.bonds
            .iter()
            .find(|b| b.key() == key)
            .map_or(BondOrder::None, |b| b.order)
    }

    pub fn translated(&self, shift: Vec3) -> Molecule {
        let mut m = self.clone();
        for a in &mut m.atoms {
            a.position += shift;
        }
        m
    }

    /// Applies `x -> rot * x + shift` to every atom.
    pub fn transformed(&self, rot: &nalgebra::Matrix3<f64>, shift: Vec3) -> Molecule {
        let mut m = self.clone();
        for a in &mut m.atoms {
            a.position = rot * a.position + shift;
        }
        m
    }

    /// Renumbers atoms so that new atom `k` is old atom `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Molecule {
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        Molecule {
            name: self.name.clone(),
            atoms: perm.iter().map(|&old| self.atoms[old]).collect(),
            bonds: self
                .bonds
                .iter()
                .map(|b| Bond::new(inverse[b.i], inverse[b.j], b.order))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_carbons() -> Vec<Atom> {
        vec![
            Atom::new(Element::C, Vec3::new(0.0, 0.0, 0.0)),
            Atom::new(Element::C, Vec3::new(1.5, 0.0, 0.0)),
        ]
    }

    #[test]
    fn rejects_self_and_duplicate_bonds() {
        assert!(Molecule::new("x", two_carbons(), vec![Bond::new(0, 0, BondOrder::Single)]).is_err());
        let dup = vec![
            Bond::new(0, 1, BondOrder::Single),
            Bond::new(1, 0, BondOrder::Double),
        ];
        assert!(Molecule::new("x", two_carbons(), dup).is_err());
        assert!(Molecule::new("x", two_carbons(), vec![Bond::new(0, 2, BondOrder::Single)]).is_err());
    }

    #[test]
    fn rejects_empty_and_nonfinite() {
        assert!(Molecule::new("x", vec![], vec![]).is_err());
        let atoms = vec![Atom::new(Element::C, Vec3::new(f64::NAN, 0.0, 0.0))];
        assert!(Molecule::new("x", atoms, vec![]).is_err());
    }

    #[test]
    fn bond_one_hot_sums_to_one() {
        for o in BondOrder::ALL {
            assert_eq!(o.one_hot().iter().sum::<f64>(), 1.0);
            assert_eq!(BondOrder::from_index(o.index()), Some(o));
            assert_eq!(BondOrder::from_name(o.name()), Some(o));
        }
    }

    #[test]
    fn permutation_preserves_bond_graph() {
        let mut atoms = two_carbons();
        atoms.push(Atom::new(Element::O, Vec3::new(2.5, 0.0, 0.0)));
        let m = Molecule::new(
            "x",
            atoms,
            vec![Bond::new(0, 1, BondOrder::Single), Bond::new(1, 2, BondOrder::Double)],
        )
        .unwrap();
        let p = m.permuted(&[2, 0, 1]);
        assert_eq!(p.atoms[0].element, Element::O);
        assert_eq!(p.bond_order(0, 2), BondOrder::Double);
        assert_eq!(p.bond_order(1, 2), BondOrder::Single);
        p.validate().unwrap();
    }
}
