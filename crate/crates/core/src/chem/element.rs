use std::fmt;
use std::str::FromStr;

use super::ChemError;

/// Elements the generator can place. Anything else is rejected at parse time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Element {
    H,
    C,
    N,
    O,
    F,
    P,
    S,
    Cl,
    Br,
    I,
}

impl Element {
    pub const ALL: [Element; 10] = [
        Element::H,
        Element::C,
        Element::N,
        Element::O,
        Element::F,
        Element::P,
        Element::S,
        Element::Cl,
        Element::Br,
        Element::I,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Element::H => "H",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
            Element::P => "P",
            Element::S => "S",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
        }
    }

    pub fn atomic_number(self) -> u8 {
        match self {
            Element::H => 1,
            Element::C => 6,
            Element::N => 7,
            Element::O => 8,
            Element::F => 9,
            Element::P => 15,
            Element::S => 16,
            Element::Cl => 17,
            Element::Br => 35,
            Element::I => 53,
        }
    }

    /// Van der Waals radius in Å.
    pub fn vdw_radius(self) -> f64 {
        match self {
            Element::H => 1.2,
            Element::C => 1.7,
            Element::N => 1.55,
            Element::O => 1.52,
            Element::F => 1.47,
            Element::P => 1.8,
            Element::S => 1.8,
            Element::Cl => 1.75,
            Element::Br => 1.85,
            Element::I => 1.98,
        }
    }

    /// Whether the element has an aromatic feature class.
    pub fn can_be_aromatic(self) -> bool {
        matches!(
            self,
            Element::C | Element::N | Element::O | Element::P | Element::S
        )
    }

    pub fn is_hydrogen(self) -> bool {
        self == Element::H
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Element {
    type Err = ChemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let sym = s.trim();
        Element::ALL
            .iter()
            .copied()
            .find(|e| e.symbol().eq_ignore_ascii_case(sym))
            .ok_or_else(|| ChemError::UnsupportedElement {
                symbol: sym.to_string(),
                line: None,
            })
    }
}

/// Number of one-hot atom feature classes.
pub const NUM_ATOM_CLASSES: usize = 15;

/// One of the 15 (element, aromatic) feature classes.
///
/// Indices 0..10 are the non-aromatic elements in [`Element::ALL`] order,
/// 10..15 the aromatic C, N, O, P, S.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AtomClass(u8);

const AROMATIC_ELEMENTS: [Element; 5] = [Element::C, Element::N, Element::O, Element::P, Element::S];

impl AtomClass {
    pub fn new(element: Element, aromatic: bool) -> Result<Self, ChemError> {
        if !aromatic {
            let idx = Element::ALL.iter().position(|&e| e == element).unwrap();
            return Ok(AtomClass(idx as u8));
        }
        AROMATIC_ELEMENTS
            .iter()
            .position(|&e| e == element)
            .map(|idx| AtomClass(10 + idx as u8))
            .ok_or(ChemError::InvalidAromatic(element))
    }

    pub fn from_index(index: usize) -> Option<Self> {
        (index < NUM_ATOM_CLASSES).then_some(AtomClass(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn element(self) -> Element {
        let i = self.index();
        if i < 10 {
            Element::ALL[i]
        } else {
            AROMATIC_ELEMENTS[i - 10]
        }
    }

    pub fn aromatic(self) -> bool {
        self.index() >= 10
    }

    pub fn one_hot(self) -> [f64; NUM_ATOM_CLASSES] {
        let mut v = [0.0; NUM_ATOM_CLASSES];
        v[self.index()] = 1.0;
        v
    }

    /// Class of the largest entry; ties go to the lower index.
    pub fn argmax(probs: &[f64]) -> Self {
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate().take(NUM_ATOM_CLASSES) {
            if p > probs[best] {
                best = i;
            }
        }
        AtomClass(best as u8)
    }

    pub fn all() -> impl Iterator<Item = AtomClass> {
        (0..NUM_ATOM_CLASSES as u8).map(AtomClass)
    }
}

impl fmt::Display for AtomClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.aromatic() {
            write!(f, "{}(ar)", self.element())
        } else {
            write!(f, "{}", self.element())
        }
    }
}
