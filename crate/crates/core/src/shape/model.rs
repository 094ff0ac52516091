//! Equivariant shape encoder and signed-distance decoder.

use rand::Rng;

use super::query::QuerySet;
use super::surface::PointCloud;
use super::ShapeError;
use crate::chem::Vec3;
use crate::nn::{Graph, Mat, Mlp, ParamStore, Var, VnInvariant, VnLeakyRelu, VnLinear};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShapeConfig {
    pub n_points: usize,
    pub n_queries: usize,
    /// Neighbours per point in each edge-convolution layer.
    pub k: usize,
    pub layers: usize,
    pub hidden: usize,
    /// Channels of the embedding `H`, which is `3 x d_p`.
    pub d_p: usize,
    pub decoder_hidden: usize,
}

impl Default for ShapeConfig {
    fn default() -> Self {
        ShapeConfig {
            n_points: 512,
            n_queries: 1024,
            k: 20,
            layers: 4,
            hidden: 256,
            d_p: 128,
            decoder_hidden: 256,
        }
    }
}

/// Equivariant embedding `H` and its rotation-invariant readout.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeEmbedding {
    /// `3 x d_p`.
    pub h: Mat,
    /// `1 x d_p`.
    pub inv: Mat,
}

impl ShapeEmbedding {
    pub fn d_p(&self) -> usize {
        self.h.cols
    }
}

#[derive(Debug, Clone)]
struct EdgeConv {
    lin: VnLinear,
    act: VnLeakyRelu,
}

#[derive(Debug, Clone)]
pub struct ShapeModel {
    pub config: ShapeConfig,
    convs: Vec<EdgeConv>,
    out: VnLinear,
    inv: VnInvariant,
    mlp: Mlp,
}

/// `(src, dst)` lists of the `k` nearest other nodes of every node, with
/// distances taken over all `3 x c` entries of each node's feature block.
fn feature_knn(x: &Mat, k: usize) -> (Vec<usize>, Vec<usize>) {
    let n = x.rows / 3;
    let w = 3 * x.cols;
    let block = |i: usize| &x.data[i * w..(i + 1) * w];
    let mut src = Vec::with_capacity(n * k);
    let mut dst = Vec::with_capacity(n * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        let bi = block(i);
        cand.clear();
        for j in 0..n {
            if j != i {
                let d: f64 = bi.iter().zip(block(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                cand.push((d, j));
            }
        }
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < cand.len() {
            cand.select_nth_unstable_by(k, cmp);
            cand.truncate(k);
        }
        cand.sort_unstable_by(cmp);
        for &(_, j) in &cand {
            src.push(j);
            dst.push(i);
        }
    }
    (src, dst)
}

impl ShapeModel {
    pub fn new(config: ShapeConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Self {
        let mut convs = Vec::with_capacity(config.layers);
        let mut c_in = 1;
        for l in 0..config.layers {
            convs.push(EdgeConv {
                lin: VnLinear::new(store, &format!("se.conv{l}.lin"), 2 * c_in, config.hidden, rng),
                act: VnLeakyRelu::new(store, &format!("se.conv{l}.act"), config.hidden, rng),
            });
            c_in = config.hidden;
        }
        let out = VnLinear::new(store, "se.out", config.hidden * config.layers, config.d_p, rng);
        let inv = VnInvariant::new(store, "se.dec.inv", config.d_p, rng);
        let mlp = Mlp::new(
            store,
            "se.dec.mlp",
            &[2 * config.d_p + 1, config.decoder_hidden, 1],
            rng,
        );
        ShapeModel {
            config,
            convs,
            out,
            inv,
            mlp,
        }
    }

    /// Builds `H` (`3 x d_p`) for a centred cloud.
    pub fn encode_graph(&self, g: &mut Graph, cloud: &PointCloud) -> Result<Var, ShapeError> {
        let n = cloud.len();
        if n <= self.config.k {
            return Err(ShapeError::TooFewPoints { n, k: self.config.k });
        }
        let mut x = g.input(Mat::from_points(&cloud.points));
        let mut outs = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let (src, dst) = feature_knn(g.value(x), self.config.k);
            let xj = g.gather_rows(x, &src, 3);
            let xi = g.gather_rows(x, &dst, 3);
            let diff = g.sub(xj, xi);
            let cat = g.concat_cols(&[diff, xi]);
            let h = conv.lin.forward(g, cat)?;
            let h = conv.act.forward(g, h)?;
            let agg = g.scatter_add_rows(h, &dst, n, 3);
            x = g.scale(agg, 1.0 / self.config.k as f64);
            outs.push(x);
        }
        let cat = g.concat_cols(&outs);
        let per_point = self.out.forward(g, cat)?;
        let pooled = g.scatter_add_rows(per_point, &vec![0; n], 1, 3);
        Ok(g.scale(pooled, 1.0 / n as f64))
    }

    /// Rotation-invariant readout of `H`, `1 x d_p`.
    pub fn invariant_graph(&self, g: &mut Graph, h: Var) -> Result<Var, ShapeError> {
        Ok(self.inv.forward(g, h)?)
    }

    /// Predicted signed distances (`Q x 1`) for query points given `H` and its readout.
    pub fn decode_graph(&self, g: &mut Graph, h: Var, inv: Var, queries: &[Vec3]) -> Result<Var, ShapeError> {
        let q = queries.len();
        let z = g.input(Mat::from_points(queries));
        let ht = g.tile_rows(h, q);
        let zh = g.block_dot(z, ht, 3);
        let zz = g.block_sq_norm(z, 3);
        let inv_t = g.tile_rows(inv, q);
        let feats = g.concat_cols(&[zh, zz, inv_t]);
        Ok(self.mlp.forward(g, feats)?)
    }

    pub fn encode(&self, store: &ParamStore, cloud: &PointCloud) -> Result<ShapeEmbedding, ShapeError> {
        let mut g = Graph::new(store);
        let h = self.encode_graph(&mut g, cloud)?;
        let inv = self.invariant_graph(&mut g, h)?;
        Ok(ShapeEmbedding {
            h: g.value(h).clone(),
            inv: g.value(inv).clone(),
        })
    }

    pub fn decode(&self, store: &ParamStore, emb: &ShapeEmbedding, queries: &[Vec3]) -> Result<Vec<f64>, ShapeError> {
        let mut g = Graph::new(store);
        let h = g.input(emb.h.clone());
        let inv = g.input(emb.inv.clone());
        let out = self.decode_graph(&mut g, h, inv, queries)?;
        Ok(g.value(out).data.clone())
    }

    /// `sum_q (o_q - o~_q)^2` for one cloud, as a graph node.
    pub fn loss_graph(&self, g: &mut Graph, cloud: &PointCloud, queries: &QuerySet) -> Result<Var, ShapeError> {
        let h = self.encode_graph(g, cloud)?;
        let inv = self.invariant_graph(g, h)?;
        let pred = self.decode_graph(g, h, inv, &queries.points)?;
        let truth = g.input(Mat::from_vec(queries.len(), 1, queries.sdf.clone()));
        let d = g.sub(pred, truth);
        let sq = g.square(d);
        Ok(g.sum(sq))
    }
}

/// Sum of squared signed-distance errors.
pub fn se_loss(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum()
}
