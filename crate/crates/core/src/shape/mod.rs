//! Surface point clouds, signed-distance queries, and the shape encoder/decoder.

mod cache;
mod model;
mod query;
pub(crate) mod surface;
mod train;

use thiserror::Error;

use crate::nn::NnError;

pub use cache::{read_sample, write_sample, CACHE_MAGIC, CACHE_VERSION};
pub use model::{se_loss, ShapeConfig, ShapeEmbedding, ShapeModel};
pub use query::{sample_query_points, QuerySet, BOX_MARGIN};
pub use surface::{build_surface_point_cloud, sample_sphere_union, PointCloud, SurfaceModel};
pub use train::{make_sample, pretrain_se, EvalRecord, SeSample, SeTrainConfig, SeTrainReport};

#[derive(Debug, Error)]
pub enum ShapeError {
    #[error("degenerate molecule: {0}")]
    Degenerate(String),
    #[error("no exposed surface to sample")]
    NoExposedSurface,
    #[error("encoder needs more than {k} points, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },
    #[error("empty training set")]
    EmptyCorpus,
    #[error("bad point cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Nn(#[from] NnError),
}
