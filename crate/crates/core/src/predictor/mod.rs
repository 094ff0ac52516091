//! Shape-conditioned prediction network: GVP message passing with
//! shape-aware embeddings, attention aggregation and per-layer bond logits.

mod blocks;
mod loss;

use log::warn;
use rand::Rng;
use thiserror::Error;

use crate::chem::{knn_edges, ChemError, Edge, Vec3, NUM_ATOM_CLASSES, NUM_BOND_CLASSES};
use crate::nn::{Gvp, GvpDims, Graph, Mat, Mlp, NnError, ParamStore, Var, VnLinear};
use crate::shape::ShapeEmbedding;

pub use blocks::{AttentionBlock, BondBlock, MessageBlock, SarlBlock};
pub use loss::{denoising_loss, noised_sample, LossTerms, LossWeights, NoisedSample};

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Chem(#[from] ChemError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictorConfig {
    /// Scalar embedding width `d_a`.
    pub scalar_hidden: usize,
    /// Vector channels `d_r`.
    pub vector_hidden: usize,
    pub layers: usize,
    pub neighbors: usize,
    pub num_classes: usize,
    pub time_dim: usize,
    pub attn_dim: usize,
    pub heads: usize,
    /// Channels of the shape embedding.
    pub d_p: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            scalar_hidden: 128,
            vector_hidden: 32,
            layers: 8,
            neighbors: 8,
            num_classes: NUM_ATOM_CLASSES,
            time_dim: 16,
            attn_dim: 32,
            heads: 1,
            d_p: 128,
        }
    }
}

/// Sinusoidal step embedding: `[sin(t w_k), cos(t w_k)]` with `w_k = 10000^(-2k/dim)`.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let w = 10000f64.powf(-2.0 * k as f64 / dim as f64);
        out[k] = (t as f64 * w).sin();
        out[half + k] = (t as f64 * w).cos();
    }
    out
}

/// Everything one layer needs: shape-aware update, messages, attention, node GVP, bond head.
#[derive(Debug, Clone)]
struct Layer {
    sarl: SarlBlock,
    message: MessageBlock,
    attention: AttentionBlock,
    node: Gvp,
    bond: BondBlock,
}

#[derive(Debug, Clone)]
pub struct MolPredictor {
    pub config: PredictorConfig,
    init: Mlp,
    bond0: BondBlock,
    layers: Vec<Layer>,
    head_x: VnLinear,
    head_v: Mlp,
}

/// Graph nodes produced by one forward pass.
#[derive(Debug, Clone)]
pub struct PredictorOutput {
    /// `(3n) x 1` predicted clean positions.
    pub x0: Var,
    /// `n x K` predicted class probabilities.
    pub v0: Var,
    /// Bond logits (`|E| x 4`) of layers `1..=L`.
    pub bond_logits: Vec<Var>,
    pub edges: Vec<Edge>,
}

/// Plain-value result of [`MolPredictor::predict`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub x0: Vec<Vec3>,
    pub v0: Mat,
    pub bond_logits: Vec<Mat>,
    pub edges: Vec<Edge>,
}

/// Graph edges over the noisy positions, shrinking `k` for tiny molecules.
pub fn neighbor_edges(x: &[Vec3], k: usize) -> Result<Vec<Edge>, ChemError> {
    let n = x.len();
    if n < 2 {
        return Ok(Vec::new());
    }
    let k = if k >= n {
        warn!("{n} atoms is too few for {k} neighbours, using {}", n - 1);
        n - 1
    } else {
        k
    };
    knn_edges(x, k)
}

impl MolPredictor {
    pub fn new(config: PredictorConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self, PredictorError> {
        if config.layers < 2 {
            return Err(PredictorError::Invalid("the predictor needs at least two layers".into()));
        }
        if config.heads == 0 || config.attn_dim % config.heads != 0 {
            return Err(PredictorError::Invalid(format!(
                "attention width {} does not split into {} heads",
                config.attn_dim, config.heads
            )));
        }
        let (da, dr, k) = (config.scalar_hidden, config.vector_hidden, config.num_classes);
        let init = Mlp::new(store, "pred.init", &[k + config.time_dim, da, da], rng);
        let bond0 = BondBlock::new(store, "pred.bond0", da, None, rng);
        let layers = (1..=config.layers)
            .map(|l| Layer {
                sarl: SarlBlock::new(store, &format!("pred.l{l}.sarl"), da, dr, config.d_p, rng),
                message: MessageBlock::new(store, &format!("pred.l{l}.msg"), da, dr, rng),
                attention: AttentionBlock::new(store, &format!("pred.l{l}.att"), da, dr, config.attn_dim, config.heads, rng),
                node: Gvp::new(
                    store,
                    &format!("pred.l{l}.node"),
                    GvpDims {
                        s_in: k + 2 * da + config.time_dim,
                        v_in: 1 + 2 * dr,
                        s_out: da,
                        v_out: dr,
                    },
                    true,
                    rng,
                ),
                bond: BondBlock::new(store, &format!("pred.l{l}.bond"), da, Some(dr), rng),
            })
            .collect();
        let head_x = VnLinear::new(store, "pred.head_x", dr, 1, rng);
        let head_v = Mlp::new(store, "pred.head_v", &[da, da, k], rng);
        Ok(MolPredictor {
            config,
            init,
            bond0,
            layers,
            head_x,
            head_v,
        })
    }

    /// Forward pass on a graph. `x` is `(3n) x 1` in the shape frame, `v` is `n x K`,
    /// `h` is the `3 x d_p` shape embedding and `inv` its `1 x d_p` readout.
    pub fn forward(&self, g: &mut Graph, x: &[Vec3], v: &Mat, h: Var, inv: Var, t: usize) -> Result<PredictorOutput, PredictorError> {
        let c = self.config;
        let n = x.len();
        if n == 0 {
            return Err(PredictorError::Invalid("no atoms".into()));
        }
        if v.shape() != (n, c.num_classes) {
            return Err(PredictorError::Invalid(format!(
                "features are {:?}, expected ({n}, {})",
                v.shape(),
                c.num_classes
            )));
        }
        if g.shape(h) != (3, c.d_p) || g.shape(inv) != (1, c.d_p) {
            return Err(PredictorError::Invalid("shape embedding width mismatch".into()));
        }
        let edges = neighbor_edges(x, c.neighbors)?;
        let src: Vec<usize> = edges.iter().map(|e| e.src).collect();
        let dst: Vec<usize> = edges.iter().map(|e| e.dst).collect();

        let temb = time_embedding(t, c.time_dim);
        let temb = g.input(Mat::from_fn(n, c.time_dim, |_, k| temb[k]));
        let vin = g.input(v.clone());
        let xv = g.input(Mat::from_points(x));
        let h_tiled = g.tile_rows(h, n);
        let inv_tiled = g.tile_rows(inv, n);

        let init_in = g.concat_cols(&[vin, temb]);
        let mut s = self.init.forward(g, init_in)?;
        let mut r = g.input(Mat::zeros(3 * n, c.vector_hidden));

        let geom = if edges.is_empty() {
            None
        } else {
            let xj = g.gather_rows(xv, &src, 3);
            let xi = g.gather_rows(xv, &dst, 3);
            let rel = g.sub(xj, xi);
            let sq = g.block_sq_norm(rel, 3);
            let dist = g.sqrt_eps(sq, 1e-12);
            Some((rel, dist))
        };
        let mut bond_prev = match geom {
            Some((_, dist)) => Some(self.bond0.forward(g, s, None, Some(dist), &src, &dst)?),
            None => None,
        };

        let mut bond_logits = Vec::with_capacity(c.layers);
        for layer in &self.layers {
            let (s_hat, r_hat) = layer.sarl.forward(g, s, r, h_tiled, inv_tiled)?;
            let (agg_a, agg_r) = match (geom, bond_prev) {
                (Some((rel, dist)), Some(b)) => {
                    let bp = g.row_softmax(b);
                    let (ma, mr) = layer.message.forward(g, s_hat, r_hat, rel, dist, bp, &src)?;
                    let weights = layer.attention.weights(g, s_hat, r_hat, ma, mr, &dst)?;
                    layer.attention.aggregate(g, ma, mr, &weights, &dst, n)
                }
                _ => (
                    g.input(Mat::zeros(n, c.scalar_hidden)),
                    g.input(Mat::zeros(3 * n, c.vector_hidden)),
                ),
            };
            let hs = g.concat_cols(&[vin, s_hat, agg_a, temb]);
            let ys = g.concat_cols(&[xv, r_hat, agg_r]);
            let (s_new, r_new) = layer.node.forward(g, hs, Some(ys))?;
            s = s_new;
            r = r_new.expect("node GVP has vector outputs");
            if geom.is_some() {
                let b = layer.bond.forward(g, s, Some(r), None, &src, &dst)?;
                bond_logits.push(b);
                bond_prev = Some(b);
            }
        }
        let dx = self.head_x.forward(g, r)?;
        let x0 = g.add(xv, dx);
        let logits = self.head_v.forward(g, s)?;
        let v0 = g.row_softmax(logits);
        Ok(PredictorOutput {
            x0,
            v0,
            bond_logits,
            edges,
        })
    }

    pub fn predict(&self, store: &ParamStore, x: &[Vec3], v: &Mat, emb: &ShapeEmbedding, t: usize) -> Result<Prediction, PredictorError> {
        let mut g = Graph::new(store);
        let h = g.input(emb.h.clone());
        let inv = g.input(emb.inv.clone());
        let out = self.forward(&mut g, x, v, h, inv, t)?;
        Ok(Prediction {
            x0: g.value(out.x0).to_points(),
            v0: g.value(out.v0).clone(),
            bond_logits: out.bond_logits.iter().map(|&b| g.value(b).clone()).collect(),
            edges: out.edges,
        })
    }
}

/// Number of bond classes predicted on every edge.
pub const BOND_LOGITS: usize = NUM_BOND_CLASSES;


#[cfg(test)]
fn blocks_sym_pair_for_tests(g: &mut Graph, a: Var) -> (Var, Var) {
    blocks::sym_pair(g, a, &[0], &[1])
}
