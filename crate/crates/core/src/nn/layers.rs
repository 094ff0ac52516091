//! Dense, vector-neuron and geometric-vector-perceptron layers.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::NnError;

/// Slope of the vector-neuron leaky ReLU.
pub const VN_LEAK: f64 = 0.2;

/// Added under the square root of vector norms so the gradient at zero stays finite.
pub const NORM_EPS: f64 = 1e-8;

fn check_cols(g: &Graph, x: Var, cols: usize, op: &str) -> Result<(), NnError> {
    let (r, c) = g.shape(x);
    if c != cols {
        return Err(NnError::ShapeMismatch {
            op: op.to_string(),
            expected: (r, cols),
            got: (r, c),
        });
    }
    Ok(())
}

fn check_vector(g: &Graph, x: Var, cols: usize, op: &str) -> Result<(), NnError> {
    check_cols(g, x, cols, op)?;
    let (r, c) = g.shape(x);
    if r % 3 != 0 {
        return Err(NnError::ShapeMismatch {
            op: op.to_string(),
            expected: (r - r % 3, c),
            got: (r, c),
        });
    }
    Ok(())
}

/// Safe per-channel norm of a vector feature: `(3n) x c -> n x c`.
pub fn vec_norm(g: &mut Graph, v: Var) -> Var {
    let sq = g.block_sq_norm(v, 3);
    g.sqrt_eps(sq, NORM_EPS)
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let w = store.add_uniform(format!("{name}.w"), d_in, d_out, d_in, rng);
        let b = bias.then(|| store.add_uniform(format!("{name}.b"), 1, d_out, d_in, rng));
        Linear { w, b, d_in, d_out }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NnError> {
        check_cols(g, x, self.d_in, "linear")?;
        let w = g.param(self.w);
        let y = g.matmul(x, w);
        Ok(match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        })
    }
}

/// Linear layers with SiLU between them and nothing after the last.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims` lists input, hidden and output widths.
    pub fn new(store: &mut ParamStore, name: &str, dims: &[usize], rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| Linear::new(store, &format!("{name}.{k}"), w[0], w[1], true, rng))
            .collect();
        Mlp { layers }
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().unwrap().d_out
    }

    pub fn forward(&self, g: &mut Graph, mut x: Var) -> Result<Var, NnError> {
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            x = l.forward(g, x)?;
            if k < last {
                x = g.silu(x);
            }
        }
        Ok(x)
    }
}

/// Channel mixing `X W` of a vector feature. Commutes with rotations exactly.
#[derive(Debug, Clone)]
pub struct VnLinear {
    pub w: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl VnLinear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        let w = store.add_uniform(format!("{name}.w"), d_in, d_out, d_in, rng);
        VnLinear { w, d_in, d_out }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NnError> {
        check_vector(g, x, self.d_in, "vn_linear")?;
        let w = g.param(self.w);
        Ok(g.matmul(x, w))
    }
}

/// Vector-neuron leaky ReLU with a learned direction per channel.
#[derive(Debug, Clone)]
pub struct VnLeakyRelu {
    pub dir: VnLinear,
}

impl VnLeakyRelu {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, rng: &mut impl Rng) -> Self {
        VnLeakyRelu {
            dir: VnLinear::new(store, &format!("{name}.dir"), d, d, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NnError> {
        let k = self.dir.forward(g, x)?;
        Ok(g.vn_leaky(x, k, VN_LEAK))
    }
}

/// VN-linear, VN leaky ReLU, VN-linear.
#[derive(Debug, Clone)]
pub struct VnMlp {
    pub lin1: VnLinear,
    pub act: VnLeakyRelu,
    pub lin2: VnLinear,
}

impl VnMlp {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        VnMlp {
            lin1: VnLinear::new(store, &format!("{name}.lin1"), d_in, hidden, rng),
            act: VnLeakyRelu::new(store, &format!("{name}.act"), hidden, rng),
            lin2: VnLinear::new(store, &format!("{name}.lin2"), hidden, d_out, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NnError> {
        let h = self.lin1.forward(g, x)?;
        let h = self.act.forward(g, h)?;
        self.lin2.forward(g, h)
    }
}

/// Rotation-invariant readout: channel `c` of the output is `<X_c, (X W)_c>`.
#[derive(Debug, Clone)]
pub struct VnInvariant {
    pub mix: VnLinear,
}

impl VnInvariant {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, rng: &mut impl Rng) -> Self {
        VnInvariant {
            mix: VnLinear::new(store, &format!("{name}.mix"), d, d, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NnError> {
        let y = self.mix.forward(g, x)?;
        Ok(g.block_dot_channels(x, y, 3))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GvpDims {
    pub s_in: usize,
    pub v_in: usize,
    pub s_out: usize,
    pub v_out: usize,
}

/// Geometric vector perceptron with a scalar-conditioned vector gate.
#[derive(Debug, Clone)]
pub struct Gvp {
    pub dims: GvpDims,
    pub wh: Option<VnLinear>,
    pub wmu: Option<VnLinear>,
    pub ws: Linear,
    pub gate: Option<Linear>,
    pub activate: bool,
}

impl Gvp {
    pub fn new(store: &mut ParamStore, name: &str, dims: GvpDims, activate: bool, rng: &mut impl Rng) -> Self {
        let h = dims.v_in.max(dims.v_out);
        let wh = (dims.v_in > 0).then(|| VnLinear::new(store, &format!("{name}.wh"), dims.v_in, h, rng));
        let h_used = if dims.v_in > 0 { h } else { 0 };
        let ws = Linear::new(store, &format!("{name}.ws"), dims.s_in + h_used, dims.s_out, true, rng);
        let (wmu, gate) = if dims.v_out > 0 && dims.v_in > 0 {
            (
                Some(VnLinear::new(store, &format!("{name}.wmu"), h, dims.v_out, rng)),
                Some(Linear::new(store, &format!("{name}.gate"), dims.s_out, dims.v_out, true, rng)),
            )
        } else {
            (None, None)
        };
        assert!(
            dims.v_out == 0 || dims.v_in > 0,
            "a GVP cannot create vector channels from scalars alone"
        );
        Gvp {
            dims,
            wh,
            wmu,
            ws,
            gate,
            activate,
        }
    }

    /// Returns `(s', V')`; `V'` is `None` when the layer has no vector outputs.
    pub fn forward(&self, g: &mut Graph, s: Var, v: Option<Var>) -> Result<(Var, Option<Var>), NnError> {
        check_cols(g, s, self.dims.s_in, "gvp scalars")?;
        let n = g.shape(s).0;
        let (s_cat, vh) = match (&self.wh, v) {
            (Some(wh), Some(v)) => {
                check_vector(g, v, self.dims.v_in, "gvp vectors")?;
                if g.shape(v).0 != 3 * n {
                    return Err(NnError::ShapeMismatch {
                        op: "gvp vectors".into(),
                        expected: (3 * n, self.dims.v_in),
                        got: g.shape(v),
                    });
                }
                let vh = wh.forward(g, v)?;
                let norm = vec_norm(g, vh);
                (g.concat_cols(&[s, norm]), Some(vh))
            }
            (None, None) => (s, None),
            _ => {
                return Err(NnError::ShapeMismatch {
                    op: "gvp vector input".into(),
                    expected: (3 * n, self.dims.v_in),
                    got: v.map_or((0, 0), |v| g.shape(v)),
                })
            }
        };
        let pre = self.ws.forward(g, s_cat)?;
        let s_act = if self.activate { g.silu(pre) } else { pre };
        let v_out = match (&self.wmu, &self.gate, vh) {
            (Some(wmu), Some(gate), Some(vh)) => {
                let vo = wmu.forward(g, vh)?;
                let gl = gate.forward(g, s_act)?;
                let gs = g.sigmoid(gl);
                Some(g.gate_blocks(vo, gs, 3))
            }
            _ => None,
        };
        Ok((s_act, v_out))
    }
}

/// GVP layers applied in sequence; the final one has no scalar activation.
#[derive(Debug, Clone)]
pub struct GvpStack {
    pub layers: Vec<Gvp>,
}

impl GvpStack {
    pub fn new(store: &mut ParamStore, name: &str, dims: &[GvpDims], rng: &mut impl Rng) -> Self {
        let last = dims.len() - 1;
        let layers = dims
            .iter()
            .enumerate()
            .map(|(k, &d)| Gvp::new(store, &format!("{name}.{k}"), d, k < last, rng))
            .collect();
        GvpStack { layers }
    }

    /// `count` layers mapping `(s_in, v_in)` to `(s_out, v_out)` through `(s_hidden, v_hidden)`.
    pub fn uniform(
        store: &mut ParamStore,
        name: &str,
        count: usize,
        (s_in, v_in): (usize, usize),
        (s_hidden, v_hidden): (usize, usize),
        (s_out, v_out): (usize, usize),
        rng: &mut impl Rng,
    ) -> Self {
        let mut dims = Vec::with_capacity(count);
        for k in 0..count {
            let (si, vi) = if k == 0 { (s_in, v_in) } else { (s_hidden, v_hidden) };
            let (so, vo) = if k + 1 == count { (s_out, v_out) } else { (s_hidden, v_hidden) };
            dims.push(GvpDims {
                s_in: si,
                v_in: vi,
                s_out: so,
                v_out: vo,
            });
        }
        Self::new(store, name, &dims, rng)
    }

    pub fn forward(&self, g: &mut Graph, mut s: Var, mut v: Option<Var>) -> Result<(Var, Option<Var>), NnError> {
        for l in &self.layers {
            (s, v) = l.forward(g, s, v)?;
        }
        Ok((s, v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, random_rotation, Mat};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Weighted sum so gradients of every output entry are exercised.
    fn probe(g: &mut Graph, x: Var, seed: u64) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, c) = g.shape(x);
        let w = g.input(rand_mat(&mut rng, r, c));
        let p = g.mul(x, w);
        g.sum(p)
    }

    #[test]
    fn vn_linear_identity_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let l = VnLinear::new(&mut store, "l", 4, 4, &mut rng);
        store.set("l.w", Mat::identity(4)).unwrap();
        let x = rand_mat(&mut rng, 6, 4);
        let mut g = Graph::new(&store);
        let xv = g.input(x.clone());
        let y = l.forward(&mut g, xv).unwrap();
        assert_eq!(g.value(y), &x);
        let z = g.input(Mat::zeros(6, 4));
        let yz = l.forward(&mut g, z).unwrap();
        assert!(g.value(yz).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vn_linear_shape_mismatch_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let l = VnLinear::new(&mut store, "l", 4, 2, &mut rng);
        let mut g = Graph::new(&store);
        let x = g.input(Mat::zeros(6, 3));
        assert!(matches!(l.forward(&mut g, x), Err(NnError::ShapeMismatch { .. })));
    }

    #[test]
    fn vn_linear_commutes_with_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let l = VnLinear::new(&mut store, "l", 5, 3, &mut rng);
        for _ in 0..100 {
            let x = rand_mat(&mut rng, 12, 5);
            let r = random_rotation(&mut rng);
            let mut g = Graph::new(&store);
            let a = g.input(x.rotate_blocks(&r));
            let b = g.input(x);
            let ya = l.forward(&mut g, a).unwrap();
            let yb = l.forward(&mut g, b).unwrap();
            assert!(g.value(ya).max_abs_diff(&g.value(yb).rotate_blocks(&r)) < 1e-10);
        }
    }

    #[test]
    fn vn_leaky_closed_form() {
        let mut g = Graph::standalone();
        // Aligned: unchanged.
        let x = g.input(Mat::from_vec(3, 1, vec![2.0, 0.0, 0.0]));
        let k = g.input(Mat::from_vec(3, 1, vec![1.0, 0.0, 0.0]));
        let y = g.vn_leaky(x, k, VN_LEAK);
        assert_eq!(g.value(y).data, vec![2.0, 0.0, 0.0]);
        // Anti-aligned parallel part scaled by the leak, orthogonal part kept.
        let x2 = g.input(Mat::from_vec(3, 1, vec![-2.0, 1.0, 0.0]));
        let y2 = g.vn_leaky(x2, k, VN_LEAK);
        let got = &g.value(y2).data;
        assert!((got[0] - (-2.0 * VN_LEAK)).abs() < 1e-8);
        assert!((got[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vn_mlp_and_leaky_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let m = VnMlp::new(&mut store, "m", 4, 6, 3, &mut rng);
        for _ in 0..100 {
            let x = rand_mat(&mut rng, 9, 4);
            let r = random_rotation(&mut rng);
            let mut g = Graph::new(&store);
            let a = g.input(x.rotate_blocks(&r));
            let b = g.input(x);
            let ya = m.forward(&mut g, a).unwrap();
            let yb = m.forward(&mut g, b).unwrap();
            assert!(g.value(ya).max_abs_diff(&g.value(yb).rotate_blocks(&r)) < 1e-6);
        }
    }

    #[test]
    fn vn_invariant_self_dot_and_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let inv = VnInvariant::new(&mut store, "inv", 1, &mut rng);
        store.set("inv.mix.w", Mat::identity(1)).unwrap();
        let mut g = Graph::new(&store);
        let x = g.input(Mat::from_vec(3, 1, vec![3.0, 4.0, 0.0]));
        let y = inv.forward(&mut g, x).unwrap();
        assert!((g.value(y).item() - 25.0).abs() < 1e-12);
        let z = g.input(Mat::zeros(3, 1));
        let yz = inv.forward(&mut g, z).unwrap();
        assert_eq!(g.value(yz).item(), 0.0);

        let mut store = ParamStore::new();
        let inv = VnInvariant::new(&mut store, "inv", 6, &mut rng);
        for _ in 0..100 {
            let x = rand_mat(&mut rng, 6, 6);
            let r = random_rotation(&mut rng);
            let mut g = Graph::new(&store);
            let a = g.input(x.rotate_blocks(&r));
            let b = g.input(x);
            let ya = inv.forward(&mut g, a).unwrap();
            let yb = inv.forward(&mut g, b).unwrap();
            assert!(g.value(ya).max_abs_diff(g.value(yb)) < 1e-9);
        }
    }

    fn small_gvp(store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Gvp {
        let dims = GvpDims {
            s_in: 5,
            v_in: 3,
            s_out: 4,
            v_out: 2,
        };
        Gvp::new(store, "gvp", dims, true, rng)
    }

    #[test]
    fn gvp_zero_vectors_reduce_to_feed_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let gvp = small_gvp(&mut store, &mut rng);
        let s = rand_mat(&mut rng, 2, 5);
        let mut g = Graph::new(&store);
        let sv = g.input(s.clone());
        let vv = g.input(Mat::zeros(6, 3));
        let (so, vo) = gvp.forward(&mut g, sv, Some(vv)).unwrap();
        assert!(g.value(vo.unwrap()).data.iter().all(|&x| x == 0.0));
        // Oracle: silu(s W_s[:5] + b), the norm columns contributing nothing.
        let w = store.value(gvp.ws.w);
        let b = store.value(gvp.ws.b.unwrap());
        let expect = Mat::from_fn(2, 4, |r, c| {
            let z: f64 = (0..5).map(|k| s.at(r, k) * w.at(k, c)).sum::<f64>() + b.at(0, c);
            z / (1.0 + (-z).exp())
        });
        assert!(g.value(so).max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn gvp_zero_weights_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let gvp = small_gvp(&mut store, &mut rng);
        let names: Vec<(String, (usize, usize))> = store.iter().map(|(_, n, m)| (n.to_string(), m.shape())).collect();
        for (n, (r, c)) in names {
            store.set(&n, Mat::zeros(r, c)).unwrap();
        }
        let mut g = Graph::new(&store);
        let s = g.input(rand_mat(&mut rng, 2, 5));
        let v = g.input(rand_mat(&mut rng, 6, 3));
        let (so, vo) = gvp.forward(&mut g, s, Some(v)).unwrap();
        assert!(g.value(so).data.iter().all(|&x| x == 0.0));
        assert!(g.value(vo.unwrap()).data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gvp_rotation_behaviour() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let stack = GvpStack::uniform(&mut store, "st", 3, (5, 3), (8, 4), (4, 2), &mut rng);
        for _ in 0..100 {
            let s = rand_mat(&mut rng, 4, 5);
            let v = rand_mat(&mut rng, 12, 3);
            let r = random_rotation(&mut rng);
            let mut g = Graph::new(&store);
            let sv = g.input(s);
            let va = g.input(v.rotate_blocks(&r));
            let vb = g.input(v);
            let (sa, oa) = stack.forward(&mut g, sv, Some(va)).unwrap();
            let (sb, ob) = stack.forward(&mut g, sv, Some(vb)).unwrap();
            assert!(g.value(sa).max_abs_diff(g.value(sb)) < 1e-9);
            let (oa, ob) = (oa.unwrap(), ob.unwrap());
            assert!(g.value(oa).max_abs_diff(&g.value(ob).rotate_blocks(&r)) < 1e-6);
        }
    }

    #[test]
    fn gvp_shape_mismatch_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let gvp = small_gvp(&mut store, &mut rng);
        let mut g = Graph::new(&store);
        let s = g.input(Mat::zeros(2, 4));
        let v = g.input(Mat::zeros(6, 3));
        assert!(gvp.forward(&mut g, s, Some(v)).is_err());
        let s = g.input(Mat::zeros(2, 5));
        let v = g.input(Mat::zeros(9, 3));
        assert!(gvp.forward(&mut g, s, Some(v)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "lin", 4, 3, true, &mut rng);
        let stack = GvpStack::uniform(&mut store, "gvp", 2, (5, 3), (6, 4), (4, 2), &mut rng);
        let inv = VnInvariant::new(&mut store, "inv", 3, &mut rng);
        let vmlp = VnMlp::new(&mut store, "vm", 3, 4, 2, &mut rng);

        let err = grad_check(
            &store,
            |g, x| {
                let y = lin.forward(g, x[0]).unwrap();
                probe(g, y, 1)
            },
            &[rand_mat(&mut rng, 3, 4)],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "linear {err}");

        let err = grad_check(
            &store,
            |g, x| {
                let (s, v) = stack.forward(g, x[0], Some(x[1])).unwrap();
                let a = probe(g, s, 2);
                let b = probe(g, v.unwrap(), 3);
                g.add(a, b)
            },
            &[rand_mat(&mut rng, 3, 5), rand_mat(&mut rng, 9, 3)],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "gvp {err}");

        let err = grad_check(
            &store,
            |g, x| {
                let y = inv.forward(g, x[0]).unwrap();
                probe(g, y, 4)
            },
            &[rand_mat(&mut rng, 6, 3)],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "vn_invariant {err}");

        let err = grad_check(
            &store,
            |g, x| {
                let y = vmlp.forward(g, x[0]).unwrap();
                probe(g, y, 5)
            },
            &[rand_mat(&mut rng, 6, 3)],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "vn_mlp {err}");
    }
}
