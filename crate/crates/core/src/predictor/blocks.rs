use rand::Rng;

use crate::nn::{vec_norm, Gvp, GvpDims, Graph, Mlp, NnError, ParamStore, Var, VnMlp};

use super::BOND_LOGITS;

/// Shape-aware update of one layer's embeddings.
#[derive(Debug, Clone)]
pub struct SarlBlock {
    /// `o = MLP([h, <r, H>, |r|, VN-In(H)])`.
    pub interact: Mlp,
    /// `h^ = MLP([h, o])`.
    pub fuse: Mlp,
    /// `r^ = VN-MLP([r, H])`.
    pub vector: VnMlp,
}

impl SarlBlock {
    pub fn new(store: &mut ParamStore, name: &str, da: usize, dr: usize, dp: usize, rng: &mut impl Rng) -> Self {
        SarlBlock {
            interact: Mlp::new(store, &format!("{name}.interact"), &[da + dr * dp + dr + dp, da, da], rng),
            fuse: Mlp::new(store, &format!("{name}.fuse"), &[2 * da, da, da], rng),
            vector: VnMlp::new(store, &format!("{name}.vector"), dr + dp, dr, dr, rng),
        }
    }

    /// Interaction embedding `o` (`n x d_a`).
    pub fn interaction(&self, g: &mut Graph, s: Var, r: Var, h_tiled: Var, inv_tiled: Var) -> Result<Var, NnError> {
        let dots = g.block_dot(r, h_tiled, 3);
        let norms = vec_norm(g, r);
        let feats = g.concat_cols(&[s, dots, norms, inv_tiled]);
        self.interact.forward(g, feats)
    }

    /// `(h^, r^)` from `(h, r)` with `H` tiled once per atom (`3n x d_p`) and its readout (`n x d_p`).
    pub fn forward(&self, g: &mut Graph, s: Var, r: Var, h_tiled: Var, inv_tiled: Var) -> Result<(Var, Var), NnError> {
        let o = self.interaction(g, s, r, h_tiled, inv_tiled)?;
        let so = g.concat_cols(&[s, o]);
        let s_hat = self.fuse.forward(g, so)?;
        let rh = g.concat_cols(&[r, h_tiled]);
        let r_hat = self.vector.forward(g, rh)?;
        Ok((s_hat, r_hat))
    }
}

/// Edge messages `(m^a, m^r)` from the sending atom's embeddings and the edge geometry.
#[derive(Debug, Clone)]
pub struct MessageBlock {
    pub gvp: Gvp,
}

impl MessageBlock {
    pub fn new(store: &mut ParamStore, name: &str, da: usize, dr: usize, rng: &mut impl Rng) -> Self {
        let dims = GvpDims {
            s_in: da + 1 + BOND_LOGITS,
            v_in: dr + 1,
            s_out: da,
            v_out: dr,
        };
        MessageBlock {
            gvp: Gvp::new(store, &format!("{name}.gvp"), dims, true, rng),
        }
    }

    /// `rel` is `x_j - x_i` per edge (`3|E| x 1`), `dist` its length and `bond` the
    /// previous layer's bond-type probabilities.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        s_hat: Var,
        r_hat: Var,
        rel: Var,
        dist: Var,
        bond: Var,
        src: &[usize],
    ) -> Result<(Var, Var), NnError> {
        let sj = g.gather_rows(s_hat, src, 1);
        let rj = g.gather_rows(r_hat, src, 3);
        let s_in = g.concat_cols(&[sj, dist, bond]);
        let v_in = g.concat_cols(&[rj, rel]);
        let (ma, mr) = self.gvp.forward(g, s_in, Some(v_in))?;
        Ok((ma, mr.expect("message GVP has vector outputs")))
    }
}

/// Dot-product attention over each atom's incoming edges.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub query: Mlp,
    pub key: Mlp,
    pub heads: usize,
}

impl AttentionBlock {
    pub fn new(store: &mut ParamStore, name: &str, da: usize, dr: usize, width: usize, heads: usize, rng: &mut impl Rng) -> Self {
        AttentionBlock {
            query: Mlp::new(store, &format!("{name}.query"), &[da + dr, width, width], rng),
            key: Mlp::new(store, &format!("{name}.key"), &[da + dr, width, width], rng),
            heads,
        }
    }

    /// One `|E| x 1` weight column per head; weights into each atom sum to one.
    pub fn weights(&self, g: &mut Graph, s_hat: Var, r_hat: Var, ma: Var, mr: Var, dst: &[usize]) -> Result<Vec<Var>, NnError> {
        let rn = g.block_sq_norm(r_hat, 3);
        let qin = g.concat_cols(&[s_hat, rn]);
        let q = self.query.forward(g, qin)?;
        let qe = g.gather_rows(q, dst, 1);
        let mn = g.block_sq_norm(mr, 3);
        let kin = g.concat_cols(&[ma, mn]);
        let k = self.key.forward(g, kin)?;
        let prod = g.mul(qe, k);
        let width = g.shape(prod).1 / self.heads;
        Ok((0..self.heads)
            .map(|h| {
                let part = g.slice_cols(prod, h * width, width);
                let logit = g.row_sum(part);
                g.segment_softmax(logit, dst)
            })
            .collect())
    }

    /// `(sum_j e_ji m^a_ji, sum_j e_ji m^r_ji)`, averaged over heads.
    pub fn aggregate(&self, g: &mut Graph, ma: Var, mr: Var, weights: &[Var], dst: &[usize], n: usize) -> (Var, Var) {
        let rep: Vec<usize> = (0..dst.len()).flat_map(|e| [e, e, e]).collect();
        let mut acc: Option<(Var, Var)> = None;
        for &e in weights {
            let wa = g.mul_col(ma, e);
            let a = g.scatter_add_rows(wa, dst, n, 1);
            let e3 = g.gather_rows(e, &rep, 1);
            let wr = g.mul_col(mr, e3);
            let r = g.scatter_add_rows(wr, dst, n, 3);
            acc = Some(match acc {
                None => (a, r),
                Some((pa, pr)) => (g.add(pa, a), g.add(pr, r)),
            });
        }
        let (a, r) = acc.expect("at least one attention head");
        if weights.len() == 1 {
            return (a, r);
        }
        let s = 1.0 / weights.len() as f64;
        (g.scale(a, s), g.scale(r, s))
    }
}

/// Symmetric bond-type logits from sums and absolute differences of atom embeddings.
#[derive(Debug, Clone)]
pub struct BondBlock {
    pub mlp: Mlp,
    /// Vector channels for layers after the first; `None` for the distance-based first layer.
    pub vector: Option<usize>,
}

impl BondBlock {
    pub fn new(store: &mut ParamStore, name: &str, da: usize, vector: Option<usize>, rng: &mut impl Rng) -> Self {
        let extra = vector.map_or(1, |dr| 2 * dr);
        BondBlock {
            mlp: Mlp::new(store, &format!("{name}.mlp"), &[2 * da + extra, da, BOND_LOGITS], rng),
            vector,
        }
    }

    /// Logits per edge. The first-layer form reads `dist`; later ones read `r`.
    pub fn forward(
        &self,
        g: &mut Graph,
        s: Var,
        r: Option<Var>,
        dist: Option<Var>,
        src: &[usize],
        dst: &[usize],
    ) -> Result<Var, NnError> {
        let (sum, diff) = sym_pair(g, s, src, dst);
        let feats = match (self.vector, r, dist) {
            (Some(_), Some(r), _) => {
                let norms = g.block_sq_norm(r, 3);
                let (nsum, ndiff) = sym_pair(g, norms, src, dst);
                g.concat_cols(&[sum, diff, nsum, ndiff])
            }
            (None, _, Some(d)) => g.concat_cols(&[sum, diff, d]),
            _ => {
                return Err(NnError::ShapeMismatch {
                    op: "bond block inputs".into(),
                    expected: (0, 0),
                    got: (0, 0),
                })
            }
        };
        self.mlp.forward(g, feats)
    }
}

/// `(a_i + a_j, |a_i - a_j|)` for every edge.
pub(super) fn sym_pair(g: &mut Graph, a: Var, src: &[usize], dst: &[usize]) -> (Var, Var) {
    let ai = g.gather_rows(a, dst, 1);
    let aj = g.gather_rows(a, src, 1);
    let sum = g.add(ai, aj);
    let d = g.sub(ai, aj);
    (sum, g.abs(d))
}
