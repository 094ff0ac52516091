//! Evaluation: shape and graph similarity, set scores, stability and
//! geometry divergences.

mod fingerprint;
mod geometry;
mod sets;
mod shape_sim;

use thiserror::Error;

pub use fingerprint::{canonical_hash, circular_identifiers, fingerprint, graph_similarity, mix64, Fingerprint, FP_BITS, FP_RADIUS};
pub use geometry::{
    angle, compare_geometry, dihedral, geometry_stats, intersecting_ring_types, js_divergence, js_divergence_probs,
    GeometryHistograms, Histogram, RingType,
};
pub use sets::{
    desirable_from_scores, desirable_rate, diversity, is_desirable, score_against, stability, stability_rates,
    DesirableReport, NoveltyIndex, PairScores, Stability, INDEX_MAGIC, INDEX_VERSION, SHAPE_THRESHOLD,
};
pub use shape_sim::{align, axis_rotations, overlap, shape_similarity, shape_tanimoto_unaligned, GaussianShape};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("histogram binning mismatch: {0}")]
    BinningMismatch(String),
    #[error("novelty index: {0}")]
    Index(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
