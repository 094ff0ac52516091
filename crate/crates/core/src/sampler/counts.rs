//! Atom-count distribution conditioned on the size of the condition shape.

use std::collections::BTreeMap;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::shape::PointCloud;

pub const DEFAULT_BINS: usize = 10;

/// Volume of the axis-aligned box around a cloud.
pub fn cloud_volume(cloud: &PointCloud) -> f64 {
    if cloud.is_empty() {
        return 0.0;
    }
    let (mut lo, mut hi) = (cloud.points[0], cloud.points[0]);
    for p in &cloud.points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let e = hi - lo;
    e.x * e.y * e.z
}

/// Atom counts of training molecules, split into equal-population volume bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomCountHistogram {
    /// Upper volume bound of every bin but the last.
    pub bounds: Vec<f64>,
    /// `count -> frequency` per bin.
    pub bins: Vec<BTreeMap<usize, usize>>,
    pub global: BTreeMap<usize, usize>,
}

impl AtomCountHistogram {
    /// Builds from `(volume, atom count)` pairs.
    pub fn build(samples: &[(f64, usize)], n_bins: usize) -> Self {
        let mut sorted: Vec<(f64, usize)> = samples.iter().copied().filter(|&(_, n)| n > 0).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let n_bins = n_bins.max(1).min(sorted.len().max(1));
        let mut bounds = Vec::with_capacity(n_bins.saturating_sub(1));
        let mut bins = vec![BTreeMap::new(); n_bins];
        let mut global = BTreeMap::new();
        for (k, &(_, n)) in sorted.iter().enumerate() {
            let b = k * n_bins / sorted.len();
            *bins[b].entry(n).or_insert(0) += 1;
            *global.entry(n).or_insert(0) += 1;
        }
        for b in 1..n_bins {
            // Midway between the last volume of bin b-1 and the first of bin b.
            let first = (b * sorted.len()).div_ceil(n_bins);
            bounds.push(0.5 * (sorted[first - 1].0 + sorted[first].0));
        }
        AtomCountHistogram { bounds, bins, global }
    }

    /// Bin holding `volume`; out-of-range volumes clamp to the end bins.
    pub fn bin_of(&self, volume: f64) -> usize {
        self.bounds.iter().take_while(|&&b| volume > b).count()
    }

    pub fn sample(&self, volume: f64, rng: &mut impl Rng) -> Option<usize> {
        let bin = &self.bins[self.bin_of(volume)];
        let table = if bin.is_empty() {
            warn!("no training molecules near volume {volume:.1}; using the global atom-count histogram");
            &self.global
        } else {
            bin
        };
        draw(table, rng)
    }
}

fn draw(table: &BTreeMap<usize, usize>, rng: &mut impl Rng) -> Option<usize> {
    let total: usize = table.values().sum();
    if total == 0 {
        return None;
    }
    let mut u = rng.random_range(0..total);
    for (&n, &c) in table {
        if u < c {
            return Some(n);
        }
        u -= c;
    }
    None
}
