//! Molecular data model, file I/O, neighbour graphs and bond chemistry.

mod bonds;
mod element;
mod molecule;
mod neighbors;
pub mod rings;
mod sdf;
mod tables;

use thiserror::Error;

pub use bonds::assign_bonds;
pub use element::{AtomClass, Element, NUM_ATOM_CLASSES};
pub use molecule::{Atom, Bond, BondOrder, Molecule, NUM_BOND_CLASSES};
pub use neighbors::{center_positions, centroid, knn_edges, Edge};
pub use sdf::{parse_sdf, serialize_molecule, write_sdf, TextFormat};
pub use tables::{BondLengthTable, ValencyTable, TABLE_HEADER};

pub type Vec3 = nalgebra::Vector3<f64>;

#[derive(Debug, Error, PartialEq)]
pub enum ChemError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported element {symbol:?}{}", line.map(|l| format!(" on line {l}")).unwrap_or_default())]
    UnsupportedElement { symbol: String, line: Option<usize> },
    #[error("unsupported bond order code {code} on line {line}")]
    UnsupportedBond { code: usize, line: usize },
    #[error("{0} has no aromatic feature class")]
    InvalidAromatic(Element),
    #[error("invalid molecule: {0}")]
    Invalid(String),
    #[error("empty point set")]
    EmptyInput,
    #[error("k = {k} needs more than {n} points")]
    TooFewPoints { k: usize, n: usize },
    #[error("chem table line {line}: {msg}")]
    Table { line: usize, msg: String },
}
