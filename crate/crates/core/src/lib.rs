//! Shape-conditioned 3D molecule generation.
//!
//! The crate is organised bottom-up:
//!
//! - [`chem`]: molecules, SDF/XYZ I/O, neighbour graphs and distance-based bonding.
//! - [`nn`]: a small reverse-mode autodiff engine plus vector-neuron and GVP layers.
//! - [`shape`]: surface point clouds, signed-distance queries and the shape autoencoder.
//! - [`diffusion`]: variance schedules, forward noising, posteriors and losses.
//! - [`predictor`]: the shape-conditioned denoising network.
//! - [`sampler`]: atom-count sampling, the reverse loop and shape/pocket guidance.
//! - [`metrics`]: shape and graph similarity, stability and geometry divergences.
//! - [`pipeline`]: configuration, checkpoints, ingestion and training loops.

pub mod chem;
pub mod diffusion;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod predictor;
pub mod sampler;
pub mod shape;

pub use chem::{Atom, AtomClass, Bond, BondOrder, Element, Molecule, Vec3};
