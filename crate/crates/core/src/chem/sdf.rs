//! V2000 SDF reading and SDF/XYZ writing.
//!
//! Only the subset needed for small organic molecules is supported: one
//! conformer per record, no query features, and charges are read but dropped.
//! Aromatic flags that are not implied by the bond block are carried in a
//! `shapediff.aromatic` data item so records written here round-trip.

use std::fmt::Write as _;

use super::element::Element;
use super::molecule::{Atom, Bond, BondOrder, Molecule};
use super::rings::perceive_aromaticity;
use super::{ChemError, Vec3};

const AROMATIC_TAG: &str = "shapediff.aromatic";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextFormat {
    Sdf,
    Xyz,
}

fn parse_err(line: usize, msg: impl Into<String>) -> ChemError {
    ChemError::Parse {
        line,
        msg: msg.into(),
    }
}

fn fixed_usize(line: &str, range: std::ops::Range<usize>, lineno: usize, what: &str) -> Result<usize, ChemError> {
    let field = line
        .get(range.clone())
        .ok_or_else(|| parse_err(lineno, format!("line too short for {what}")))?;
    field
        .trim()
        .parse()
        .map_err(|_| parse_err(lineno, format!("bad {what} field {:?}", field)))
}

/// Parses every record of a V2000 SDF text. Empty input yields an empty list.
pub fn parse_sdf(text: &str) -> Result<Vec<Molecule>, ChemError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < lines.len() {
        if lines[pos..].iter().all(|l| l.trim().is_empty()) {
            break;
        }
        let (mol, next) = parse_record(&lines, pos)?;
        out.push(mol);
        pos = next;
    }
    Ok(out)
}

/// Parses one record starting at `start`; returns the molecule and the index
/// of the line after its `$$$$` terminator.
fn parse_record(lines: &[&str], start: usize) -> Result<(Molecule, usize), ChemError> {
    let name = lines[start].trim().to_string();
    let counts_idx = start + 3;
    let counts = *lines
        .get(counts_idx)
        .ok_or_else(|| parse_err(counts_idx + 1, "missing counts line"))?;
    if counts.contains("V3000") {
        return Err(parse_err(counts_idx + 1, "V3000 records are not supported"));
    }
    let n_atoms = fixed_usize(counts, 0..3, counts_idx + 1, "atom count")?;
    let n_bonds = fixed_usize(counts, 3..6, counts_idx + 1, "bond count")?;

    let mut atoms = Vec::with_capacity(n_atoms);
    for k in 0..n_atoms {
        let idx = counts_idx + 1 + k;
        let line = *lines
            .get(idx)
            .ok_or_else(|| parse_err(idx + 1, "truncated atom block"))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 4 {
            return Err(parse_err(idx + 1, "atom line needs x, y, z and symbol"));
        }
        let mut xyz = [0.0; 3];
        for (c, f) in xyz.iter_mut().zip(&fields[..3]) {
            *c = f
                .parse()
                .map_err(|_| parse_err(idx + 1, format!("bad coordinate {f:?}")))?;
        }
        let element: Element = fields[3].parse().map_err(|_| ChemError::UnsupportedElement {
            symbol: fields[3].to_string(),
            line: Some(idx + 1),
        })?;
        atoms.push(Atom::new(element, Vec3::new(xyz[0], xyz[1], xyz[2])));
    }

    let mut bonds = Vec::with_capacity(n_bonds);
    for k in 0..n_bonds {
        let idx = counts_idx + 1 + n_atoms + k;
        let line = *lines
            .get(idx)
            .ok_or_else(|| parse_err(idx + 1, "truncated bond block"))?;
        let i = fixed_usize(line, 0..3, idx + 1, "bond atom")?;
        let j = fixed_usize(line, 3..6, idx + 1, "bond atom")?;
        let code = fixed_usize(line, 6..9, idx + 1, "bond order")?;
        let order = match code {
            1 => BondOrder::Single,
            2 => BondOrder::Double,
            4 => BondOrder::Aromatic,
            other => {
                return Err(ChemError::UnsupportedBond {
                    code: other,
                    line: idx + 1,
                })
            }
        };
        if i == 0 || j == 0 || i > n_atoms || j > n_atoms {
            return Err(parse_err(idx + 1, format!("bond references atom outside 1..={n_atoms}")));
        }
        bonds.push(Bond::new(i - 1, j - 1, order));
    }

    // Property block and data items up to the record terminator.
    let mut idx = counts_idx + 1 + n_atoms + n_bonds;
    let mut aromatic_extra: Vec<usize> = Vec::new();
    let mut ended = false;
    while idx < lines.len() {
        let line = lines[idx];
        if line.starts_with("$$$$") {
            idx += 1;
            ended = true;
            break;
        }
        if line.starts_with('>') && line.contains(&format!("<{AROMATIC_TAG}>")) {
            idx += 1;
            while idx < lines.len() && !lines[idx].trim().is_empty() && !lines[idx].starts_with("$$$$") {
                for tok in lines[idx].split_whitespace() {
                    let a: usize = tok
                        .parse()
                        .map_err(|_| parse_err(idx + 1, format!("bad aromatic index {tok:?}")))?;
                    if a == 0 || a > n_atoms {
                        return Err(parse_err(idx + 1, "aromatic index out of range"));
                    }
                    aromatic_extra.push(a - 1);
                }
                idx += 1;
            }
            continue;
        }
        idx += 1;
    }
    if !ended && idx < lines.len() {
        return Err(parse_err(idx + 1, "record not terminated"));
    }

    let mut mol = Molecule {
        name,
        atoms,
        bonds,
    };
    perceive_aromaticity(&mut mol);
    for a in aromatic_extra {
        if !mol.atoms[a].element.can_be_aromatic() {
            return Err(ChemError::InvalidAromatic(mol.atoms[a].element));
        }
        mol.atoms[a].aromatic = true;
    }
    mol.validate()?;
    Ok((mol, idx))
}

fn write_sdf_record(out: &mut String, m: &Molecule) {
    let _ = writeln!(out, "{}", m.name);
    // Program name in columns 3-10, dimension code in 21-22.
    let _ = writeln!(out, "  shapedif          3D");
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:>3}{:>3}  0  0  0  0  0  0  0  0999 V2000",
        m.atoms.len(),
        m.bonds.len()
    );
    for a in &m.atoms {
        let p = a.position;
        let _ = writeln!(
            out,
            "{:>10.4}{:>10.4}{:>10.4} {:<3} 0  0  0  0  0  0  0  0  0  0  0  0",
            p.x,
            p.y,
            p.z,
            a.element.symbol()
        );
    }
    let mut implied = vec![false; m.atoms.len()];
    for b in &m.bonds {
        let code = match b.order {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Aromatic => {
                implied[b.i] = true;
                implied[b.j] = true;
                4
            }
            BondOrder::None => continue,
        };
        let _ = writeln!(out, "{:>3}{:>3}{:>3}  0", b.i + 1, b.j + 1, code);
    }
    let _ = writeln!(out, "M  END");
    let extra: Vec<String> = m
        .atoms
        .iter()
        .enumerate()
        .filter(|(k, a)| a.aromatic && !implied[*k])
        .map(|(k, _)| (k + 1).to_string())
        .collect();
    if !extra.is_empty() {
        let _ = writeln!(out, ">  <{AROMATIC_TAG}>");
        let _ = writeln!(out, "{}", extra.join(" "));
        let _ = writeln!(out);
    }
    let _ = writeln!(out, "$$$$");
}

/// Writes one molecule as SDF or XYZ text.
pub fn serialize_molecule(m: &Molecule, format: TextFormat) -> String {
    let mut out = String::new();
    match format {
        TextFormat::Sdf => write_sdf_record(&mut out, m),
        TextFormat::Xyz => {
            let _ = writeln!(out, "{}", m.atoms.len());
            let _ = writeln!(out, "{}", m.name);
            for a in &m.atoms {
                let p = a.position;
                let _ = writeln!(out, "{:<2} {:>12.6} {:>12.6} {:>12.6}", a.element.symbol(), p.x, p.y, p.z);
            }
        }
    }
    out
}

/// Concatenated SDF records.
pub fn write_sdf(mols: &[Molecule]) -> String {
    let mut out = String::new();
    for m in mols {
        write_sdf_record(&mut out, m);
    }
    out
}
