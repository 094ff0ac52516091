use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use super::element::Element;
use super::molecule::BondOrder;
use super::ChemError;

pub const TABLE_HEADER: &str = "shapediff-chemtable v1";

const DEFAULT_BOND_LENGTHS: &str = include_str!("../../data/bond_lengths.tbl");
const DEFAULT_VALENCY: &str = include_str!("../../data/valency.tbl");

fn table_err(line: usize, msg: impl Into<String>) -> ChemError {
    ChemError::Table {
        line,
        msg: msg.into(),
    }
}

/// Non-comment lines after the header, with 1-based line numbers.
fn body_lines(text: &str) -> Result<impl Iterator<Item = (usize, Vec<&str>)>, ChemError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TABLE_HEADER => {}
        _ => return Err(table_err(1, format!("expected header {TABLE_HEADER:?}"))),
    }
    Ok(lines.filter_map(|(k, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then(|| (k + 1, l.split_whitespace().collect()))
    }))
}

fn parse_element(tok: &str, line: usize) -> Result<Element, ChemError> {
    tok.parse().map_err(|_| table_err(line, format!("unknown element {tok:?}")))
}

/// Distance interval per (element, element, order). Lookups are symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct BondLengthTable {
    entries: BTreeMap<(Element, Element, BondOrder), (f64, f64)>,
}

fn ordered(a: Element, b: Element) -> (Element, Element) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl BondLengthTable {
    pub fn parse(text: &str) -> Result<Self, ChemError> {
        let mut entries = BTreeMap::new();
        for (line, toks) in body_lines(text)? {
            if toks.len() != 6 || toks[0] != "bond" {
                return Err(table_err(line, "expected `bond <a> <b> <order> <min> <max>`"));
            }
            let a = parse_element(toks[1], line)?;
            let b = parse_element(toks[2], line)?;
            let order = BondOrder::from_name(toks[3])
                .filter(|&o| o != BondOrder::None)
                .ok_or_else(|| table_err(line, format!("bad bond order {:?}", toks[3])))?;
            let lo: f64 = toks[4].parse().map_err(|_| table_err(line, "bad min"))?;
            let hi: f64 = toks[5].parse().map_err(|_| table_err(line, "bad max"))?;
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo < hi) {
                return Err(table_err(line, "interval needs 0 <= min < max"));
            }
            let (a, b) = ordered(a, b);
            if entries.insert((a, b, order), (lo, hi)).is_some() {
                return Err(table_err(line, "duplicate entry"));
            }
        }
        Ok(BondLengthTable { entries })
    }

    pub fn get(&self, a: Element, b: Element, order: BondOrder) -> Option<(f64, f64)> {
        let (a, b) = ordered(a, b);
        self.entries.get(&(a, b, order)).copied()
    }

    pub fn max_distance(&self) -> f64 {
        self.entries.values().map(|&(_, hi)| hi).fold(0.0, f64::max)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{TABLE_HEADER}\n");
        for (&(a, b, o), &(lo, hi)) in &self.entries {
            let _ = writeln!(s, "bond {a} {b} {} {lo:.3} {hi:.3}", o.name());
        }
        s
    }
}

impl Default for BondLengthTable {
    fn default() -> Self {
        Self::parse(DEFAULT_BOND_LENGTHS).expect("bundled bond length table is valid")
    }
}

/// Allowed total valences per element.
#[derive(Debug, Clone, PartialEq)]
pub struct ValencyTable {
    entries: BTreeMap<Element, BTreeSet<u32>>,
}

impl ValencyTable {
    pub fn parse(text: &str) -> Result<Self, ChemError> {
        let mut entries = BTreeMap::new();
        for (line, toks) in body_lines(text)? {
            if toks.len() < 3 || toks[0] != "valence" {
                return Err(table_err(line, "expected `valence <element> <n>...`"));
            }
            let e = parse_element(toks[1], line)?;
            let set = toks[2..]
                .iter()
                .map(|t| t.parse::<u32>().map_err(|_| table_err(line, format!("bad valence {t:?}"))))
                .collect::<Result<BTreeSet<_>, _>>()?;
            if entries.insert(e, set).is_some() {
                return Err(table_err(line, "duplicate element"));
            }
        }
        if let Some(missing) = Element::ALL.iter().find(|e| !entries.contains_key(e)) {
            return Err(table_err(0, format!("no valence entry for {missing}")));
        }
        Ok(ValencyTable { entries })
    }

    pub fn allowed(&self, e: Element) -> &BTreeSet<u32> {
        &self.entries[&e]
    }

    pub fn max_valence(&self, e: Element) -> u32 {
        *self.entries[&e].iter().next_back().unwrap()
    }

    /// Whether a summed bond valence (aromatic counted 1.5) rounds to an allowed value.
    pub fn is_allowed(&self, e: Element, total: f64) -> bool {
        let r = total.round();
        r >= 0.0 && self.entries[&e].contains(&(r as u32))
    }
}

impl Default for ValencyTable {
    fn default() -> Self {
        Self::parse(DEFAULT_VALENCY).expect("bundled valency table is valid")
    }
}
