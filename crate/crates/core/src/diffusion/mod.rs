//! Noise schedules, forward noising, closed-form posteriors and losses.

mod losses;
mod process;
mod schedule;

use thiserror::Error;

pub use losses::{
    bond_loss, combine_losses, feature_loss, feature_posterior, kl_divergence, kl_rows, loss_bonds, loss_features,
    loss_positions, position_loss, total_loss, SNR_CLIP, XI, ZETA,
};
pub use process::{
    categorical_posterior, feature_marginal, gaussian_noise, posterior_features, posterior_positions,
    q_sample_features, q_sample_positions, sample_categorical,
};
pub use schedule::{make_schedule, snr_weight, NoiseTable, Schedule, ScheduleKind, DEFAULT_STEPS};

use crate::chem::{Edge, Molecule, Vec3};
use crate::nn::Mat;

#[derive(Debug, Error, PartialEq)]
pub enum DiffusionError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("step {t} outside 1..={steps}")]
    StepOutOfRange { t: usize, steps: usize },
    #[error("invalid state: {0}")]
    InvalidState(String),
}

/// Noisy positions and feature distributions at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseState {
    pub positions: Vec<Vec3>,
    /// `n x K` rows, each a probability vector.
    pub features: Mat,
    pub t: usize,
}

impl DenoiseState {
    pub fn new(positions: Vec<Vec3>, features: Mat, t: usize, steps: usize) -> Result<Self, DiffusionError> {
        if positions.len() != features.rows {
            return Err(DiffusionError::InvalidState(format!(
                "{} positions but {} feature rows",
                positions.len(),
                features.rows
            )));
        }
        if t == 0 || t > steps {
            return Err(DiffusionError::StepOutOfRange { t, steps });
        }
        for r in 0..features.rows {
            let s: f64 = features.row(r).iter().sum();
            if (s - 1.0).abs() > 1e-9 || features.row(r).iter().any(|&p| p < 0.0) {
                return Err(DiffusionError::InvalidState(format!("feature row {r} is not a distribution")));
            }
        }
        Ok(DenoiseState { positions, features, t })
    }
}

/// Rows of one-hot vectors for class indices.
pub fn one_hot_rows(classes: &[usize], k: usize) -> Mat {
    Mat::from_fn(classes.len(), k, |r, c| if classes[r] == c { 1.0 } else { 0.0 })
}

/// Bond class index for every edge, `0` for unbonded pairs.
pub fn bond_targets(mol: &Molecule, edges: &[Edge]) -> Vec<usize> {
    edges.iter().map(|e| mol.bond_order(e.src, e.dst).index()).collect()
}
