//! Numerical substrate: dense matrices, reverse-mode gradients, and the
//! equivariant layers built on them.

mod batch;
mod check;
mod graph;
mod layers;
mod params;
mod tensor;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

pub use batch::{batch_gradients, batch_losses};
pub use check::{grad_check, grad_check_params};
pub use graph::{Gradients, Graph, Var, LN_FLOOR};
pub use layers::{vec_norm, Gvp, GvpDims, GvpStack, Linear, Mlp, VnInvariant, VnLeakyRelu, VnLinear, VnMlp, NORM_EPS, VN_LEAK};
pub use params::{Adam, AdamConfig, Grads, ParamId, ParamStore, PlateauScheduler};
pub use tensor::Mat;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("{op}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

/// Uniformly distributed rotation matrix (normalised Gaussian quaternion).
pub fn random_rotation(rng: &mut impl Rng) -> nalgebra::Matrix3<f64> {
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let q = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
    nalgebra::UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}
