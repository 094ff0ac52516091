//! Tape-based reverse-mode differentiation.

use super::params::{Grads, ParamId, ParamStore};
use super::tensor::{gemm, Mat};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Floor applied by [`Graph::ln_clamped`].
pub const LN_FLOOR: f64 = 1e-12;

const VN_EPS: f64 = 1e-9;

enum Val {
    Owned(Mat),
    Param(usize),
}

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    GateBlocks(Var, Var, usize),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>, usize),
    ScatterAddRows(Var, Vec<usize>, usize),
    TileRows(Var, usize),
    RowSum(Var),
    Silu(Var),
    Sigmoid(Var),
    Abs(Var),
    Square(Var),
    SqrtEps(Var, f64),
    BlockSqNorm(Var, usize),
    BlockDot(Var, Var, usize),
    BlockDotChannels(Var, Var, usize),
    VnLeaky(Var, Var, f64),
    SegmentSoftmax(Var, Vec<usize>),
    RowSoftmax(Var),
    RowNormalize(Var),
    LnClamped(Var),
    CrossEntropy(Var, Vec<usize>),
    Sum(Var),
}

/// A recording of operations. Parameter values are borrowed from the store,
/// so building graphs concurrently over one store is safe.
pub struct Graph<'a> {
    store: Option<&'a ParamStore>,
    vals: Vec<Val>,
    ops: Vec<Op>,
    param_vars: Vec<Option<Var>>,
    clamp_count: usize,
}

/// Gradients of a scalar with respect to every node of a graph.
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Graph {
            store: Some(store),
            vals: Vec::new(),
            ops: Vec::new(),
            param_vars: vec![None; store.len()],
            clamp_count: 0,
        }
    }

    /// A graph that cannot reference parameters.
    pub fn standalone() -> Graph<'static> {
        Graph {
            store: None,
            vals: Vec::new(),
            ops: Vec::new(),
            param_vars: Vec::new(),
            clamp_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Number of entries floored by [`Graph::ln_clamped`] so far.
    pub fn clamp_count(&self) -> usize {
        self.clamp_count
    }

    fn push(&mut self, m: Mat, op: Op) -> Var {
        self.vals.push(Val::Owned(m));
        self.ops.push(op);
        Var(self.ops.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        match &self.vals[v.0] {
            Val::Owned(m) => m,
            Val::Param(id) => self.store.expect("parameter node without a store").value_at(*id),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn input(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        self.vals.push(Val::Param(id.index()));
        self.ops.push(Op::Param);
        let v = Var(self.ops.len() - 1);
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    fn zip(&self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Mat {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "{what}: shape mismatch");
        Mat::from_vec(x.rows, x.cols, x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, "add", |p, q| p + q);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, "sub", |p, q| p - q);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, "mul", |p, q| p * q);
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    /// Adds a constant matrix (or a 1x1 constant broadcast everywhere).
    pub fn add_const(&mut self, a: Var, c: &Mat) -> Var {
        let x = self.value(a);
        let out = if c.shape() == (1, 1) {
            x.map(|v| v + c.data[0])
        } else {
            assert_eq!(x.shape(), c.shape(), "add_const: shape mismatch");
            Mat::from_vec(x.rows, x.cols, x.data.iter().zip(&c.data).map(|(p, q)| p + q).collect())
        };
        self.push(out, Op::AddConst(a))
    }

    /// `a + b` with `b` a single row broadcast down `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (x, r) = (self.value(a), self.value(b));
        assert_eq!((1, x.cols), r.shape(), "add_row: shape mismatch");
        let mut out = x.clone();
        for row in out.data.chunks_mut(x.cols.max(1)) {
            for (o, b) in row.iter_mut().zip(&r.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, b))
    }

    /// Scales each row of `a` by the matching entry of the column `c`.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Var {
        let (x, s) = (self.value(a), self.value(c));
        assert_eq!((x.rows, 1), s.shape(), "mul_col: shape mismatch");
        let mut out = x.clone();
        for (r, row) in out.data.chunks_mut(x.cols.max(1)).enumerate() {
            for o in row {
                *o *= s.data[r];
            }
        }
        self.push(out, Op::MulCol(a, c))
    }

    /// Multiplies every row of block `i` of `v` (blocks of `block` rows) by row `i` of `s`.
    pub fn gate_blocks(&mut self, v: Var, s: Var, block: usize) -> Var {
        let (x, g) = (self.value(v), self.value(s));
        assert_eq!((x.rows, x.cols), (g.rows * block, g.cols), "gate_blocks: shape mismatch");
        let mut out = x.clone();
        for r in 0..x.rows {
            let gr = g.row(r / block);
            for (o, w) in out.row_mut(r).iter_mut().zip(gr) {
                *o *= w;
            }
        }
        self.push(out, Op::GateBlocks(v, s, block))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows, rows, "concat_cols: row mismatch");
            for r in 0..rows {
                out.row_mut(r)[off..off + m.cols].copy_from_slice(m.row(r));
            }
            off += m.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols, "slice_cols out of range");
        let out = Mat::from_fn(x.rows, len, |r, c| x.at(r, start + c));
        self.push(out, Op::SliceCols(a, start))
    }

    /// Output block `k` is input block `idx[k]`, blocks being `block` rows tall.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize], block: usize) -> Var {
        let x = self.value(a);
        let mut out = Mat::zeros(idx.len() * block, x.cols);
        for (k, &src) in idx.iter().enumerate() {
            let n = block * x.cols;
            out.data[k * n..(k + 1) * n].copy_from_slice(&x.data[src * n..(src + 1) * n]);
        }
        self.push(out, Op::GatherRows(a, idx.to_vec(), block))
    }

    /// Input block `k` is added into output block `idx[k]`; the output has `n_out` blocks.
    pub fn scatter_add_rows(&mut self, a: Var, idx: &[usize], n_out: usize, block: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.rows, idx.len() * block, "scatter_add_rows: row mismatch");
        let mut out = Mat::zeros(n_out * block, x.cols);
        let n = block * x.cols;
        for (k, &dst) in idx.iter().enumerate() {
            for (o, v) in out.data[dst * n..(dst + 1) * n].iter_mut().zip(&x.data[k * n..(k + 1) * n]) {
                *o += v;
            }
        }
        self.push(out, Op::ScatterAddRows(a, idx.to_vec(), block))
    }

    /// Stacks `times` copies of `a` vertically.
    pub fn tile_rows(&mut self, a: Var, times: usize) -> Var {
        let x = self.value(a);
        let mut data = Vec::with_capacity(x.len() * times);
        for _ in 0..times {
            data.extend_from_slice(&x.data);
        }
        let out = Mat::from_vec(x.rows * times, x.cols, data);
        self.push(out, Op::TileRows(a, times))
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = Mat::from_vec(x.rows, 1, (0..x.rows).map(|r| x.row(r).iter().sum()).collect());
        self.push(out, Op::RowSum(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * sigmoid(x));
        self.push(out, Op::Silu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        self.push(out, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a))
    }

    /// `sqrt(a + eps) - sqrt(eps)` for non-negative `a`; zero at zero with a finite slope.
    pub fn sqrt_eps(&mut self, a: Var, eps: f64) -> Var {
        let se = eps.sqrt();
        let out = self.value(a).map(|x| (x.max(0.0) + eps).sqrt() - se);
        self.push(out, Op::SqrtEps(a, eps))
    }

    /// Per-block, per-column squared norm: `(n*block) x c -> n x c`.
    pub fn block_sq_norm(&mut self, a: Var, block: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.rows % block, 0);
        let mut out = Mat::zeros(x.rows / block, x.cols);
        for r in 0..x.rows {
            for (o, v) in out.row_mut(r / block).iter_mut().zip(x.row(r)) {
                *o += v * v;
            }
        }
        self.push(out, Op::BlockSqNorm(a, block))
    }

    /// Per-block `a_i^T b_i`, flattened: `n x (ca*cb)`, entry `p*cb + q`.
    pub fn block_dot(&mut self, a: Var, b: Var, block: usize) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.rows, y.rows, "block_dot: row mismatch");
        let n = x.rows / block;
        let mut out = Mat::zeros(n, x.cols * y.cols);
        for r in 0..x.rows {
            let o = out.row_mut(r / block);
            for (p, &xv) in x.row(r).iter().enumerate() {
                for (q, &yv) in y.row(r).iter().enumerate() {
                    o[p * y.cols + q] += xv * yv;
                }
            }
        }
        self.push(out, Op::BlockDot(a, b, block))
    }

    /// Per-block, per-column dot product of two equally shaped features.
    pub fn block_dot_channels(&mut self, a: Var, b: Var, block: usize) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "block_dot_channels: shape mismatch");
        let mut out = Mat::zeros(x.rows / block, x.cols);
        for r in 0..x.rows {
            for ((o, p), q) in out.row_mut(r / block).iter_mut().zip(x.row(r)).zip(y.row(r)) {
                *o += p * q;
            }
        }
        self.push(out, Op::BlockDotChannels(a, b, block))
    }

    /// Vector-neuron leaky ReLU. For each node and channel, the component of
    /// `x` along the direction `k` is shrunk by `1 - alpha` when it points
    /// against `k`.
    pub fn vn_leaky(&mut self, x: Var, k: Var, alpha: f64) -> Var {
        let (xv, kv) = (self.value(x), self.value(k));
        assert_eq!(xv.shape(), kv.shape(), "vn_leaky: shape mismatch");
        assert_eq!(xv.rows % 3, 0);
        let mut out = xv.clone();
        let c = xv.cols;
        for n in 0..xv.rows / 3 {
            for j in 0..c {
                let at = |m: &Mat, a: usize| m.data[(3 * n + a) * c + j];
                let dot: f64 = (0..3).map(|a| at(xv, a) * at(kv, a)).sum();
                if dot < 0.0 {
                    let kk: f64 = (0..3).map(|a| at(kv, a) * at(kv, a)).sum::<f64>() + VN_EPS;
                    let f = (1.0 - alpha) * dot / kk;
                    for a in 0..3 {
                        out.data[(3 * n + a) * c + j] -= f * at(kv, a);
                    }
                }
            }
        }
        self.push(out, Op::VnLeaky(x, k, alpha))
    }

    /// Softmax of a column within each segment; `seg[e]` names the segment of row `e`.
    pub fn segment_softmax(&mut self, a: Var, seg: &[usize]) -> Var {
        let x = self.value(a);
        assert_eq!((x.rows, x.cols), (seg.len(), 1), "segment_softmax expects a column");
        let n_seg = seg.iter().max().map_or(0, |m| m + 1);
        let mut mx = vec![f64::NEG_INFINITY; n_seg];
        for (e, &s) in seg.iter().enumerate() {
            mx[s] = mx[s].max(x.data[e]);
        }
        let mut tot = vec![0.0; n_seg];
        let mut out = Mat::zeros(x.rows, 1);
        for (e, &s) in seg.iter().enumerate() {
            out.data[e] = (x.data[e] - mx[s]).exp();
            tot[s] += out.data[e];
        }
        for (e, &s) in seg.iter().enumerate() {
            out.data[e] /= tot[s];
        }
        self.push(out, Op::SegmentSoftmax(a, seg.to_vec()))
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut t = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                t += *v;
            }
            for v in row.iter_mut() {
                *v /= t;
            }
        }
        self.push(out, Op::RowSoftmax(a))
    }

    /// Divides each row by its sum. Rows must have a positive sum.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let t: f64 = row.iter().sum();
            for v in row.iter_mut() {
                *v /= t;
            }
        }
        self.push(out, Op::RowNormalize(a))
    }

    /// Natural log with inputs floored at [`LN_FLOOR`]; floored entries are counted.
    pub fn ln_clamped(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let clamped = x.data.iter().filter(|&&v| v <= LN_FLOOR || v.is_nan()).count();
        let out = x.map(|v| v.max(LN_FLOOR).ln());
        self.clamp_count += clamped;
        self.push(out, Op::LnClamped(a))
    }

    /// Summed cross-entropy of row-wise softmax against integer targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let x = self.value(logits);
        assert_eq!(x.rows, targets.len(), "cross_entropy: target count");
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = x.row(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        self.push(Mat::scalar(total), Op::CrossEntropy(logits, targets.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Mat::scalar(s), Op::Sum(a))
    }

    /// Reverse pass from a 1x1 node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.ops.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.backprop(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Gradients { grads }
    }

    /// Adds the gradients of parameter nodes into `acc`.
    pub fn accumulate_param_grads(&self, grads: &Gradients, acc: &mut Grads) {
        for (pid, v) in self.param_vars.iter().enumerate() {
            if let Some(v) = v {
                if let Some(g) = grads.get(*v) {
                    acc.mats[pid].add_assign(g);
                }
            }
        }
    }

    fn backprop(&self, id: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let y = self.value(Var(id));
        macro_rules! slot {
            ($v:expr) => {{
                let v: Var = $v;
                let (r, c) = self.value(v).shape();
                grads[v.0].get_or_insert_with(|| Mat::zeros(r, c))
            }};
        }
        match &self.ops[id] {
            Op::Leaf | Op::Param => {}
            &Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                gemm(g, false, bv, true, slot!(a), 1.0);
                gemm(av, true, g, false, slot!(b), 1.0);
            }
            &Op::Add(a, b) => {
                slot!(a).add_assign(g);
                slot!(b).add_assign(g);
            }
            &Op::Sub(a, b) => {
                slot!(a).add_assign(g);
                slot!(b).axpy(-1.0, g);
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let ga = slot!(a);
                for ((o, gv), q) in ga.data.iter_mut().zip(&g.data).zip(&bv.data) {
                    *o += gv * q;
                }
                let gb = slot!(b);
                for ((o, gv), p) in gb.data.iter_mut().zip(&g.data).zip(&av.data) {
                    *o += gv * p;
                }
            }
            &Op::Scale(a, s) => slot!(a).axpy(s, g),
            &Op::AddConst(a) => slot!(a).add_assign(g),
            &Op::AddRow(a, b) => {
                slot!(a).add_assign(g);
                let gb = slot!(b);
                for row in g.data.chunks(g.cols.max(1)) {
                    for (o, v) in gb.data.iter_mut().zip(row) {
                        *o += v;
                    }
                }
            }
            &Op::MulCol(a, c) => {
                let (av, cv) = (self.value(a), self.value(c));
                let ga = slot!(a);
                for r in 0..g.rows {
                    for (o, v) in ga.row_mut(r).iter_mut().zip(g.row(r)) {
                        *o += v * cv.data[r];
                    }
                }
                let gc = slot!(c);
                for r in 0..g.rows {
                    gc.data[r] += g.row(r).iter().zip(av.row(r)).map(|(p, q)| p * q).sum::<f64>();
                }
            }
            &Op::GateBlocks(v, s, block) => {
                let (vv, sv) = (self.value(v), self.value(s));
                let gv = slot!(v);
                for r in 0..g.rows {
                    let sr = sv.row(r / block);
                    for ((o, gg), w) in gv.row_mut(r).iter_mut().zip(g.row(r)).zip(sr) {
                        *o += gg * w;
                    }
                }
                let gs = slot!(s);
                for r in 0..g.rows {
                    for ((o, gg), x) in gs.row_mut(r / block).iter_mut().zip(g.row(r)).zip(vv.row(r)) {
                        *o += gg * x;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let gp = slot!(p);
                    let w = gp.cols;
                    for r in 0..g.rows {
                        for (o, v) in gp.row_mut(r).iter_mut().zip(&g.row(r)[off..off + w]) {
                            *o += v;
                        }
                    }
                    off += w;
                }
            }
            &Op::SliceCols(a, start) => {
                let ga = slot!(a);
                for r in 0..g.rows {
                    for (o, v) in ga.row_mut(r)[start..start + g.cols].iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
            }
            Op::GatherRows(a, idx, block) => {
                let ga = slot!(*a);
                let n = block * g.cols;
                for (k, &src) in idx.iter().enumerate() {
                    for (o, v) in ga.data[src * n..(src + 1) * n].iter_mut().zip(&g.data[k * n..(k + 1) * n]) {
                        *o += v;
                    }
                }
            }
            Op::ScatterAddRows(a, idx, block) => {
                let ga = slot!(*a);
                let n = block * g.cols;
                for (k, &dst) in idx.iter().enumerate() {
                    for (o, v) in ga.data[k * n..(k + 1) * n].iter_mut().zip(&g.data[dst * n..(dst + 1) * n]) {
                        *o += v;
                    }
                }
            }
            &Op::TileRows(a, times) => {
                let ga = slot!(a);
                let n = ga.len();
                for t in 0..times {
                    for (o, v) in ga.data.iter_mut().zip(&g.data[t * n..(t + 1) * n]) {
                        *o += v;
                    }
                }
            }
            &Op::RowSum(a) => {
                let ga = slot!(a);
                for r in 0..ga.rows {
                    let gv = g.data[r];
                    for o in ga.row_mut(r) {
                        *o += gv;
                    }
                }
            }
            &Op::Silu(a) => {
                let x = self.value(a);
                let ga = slot!(a);
                for ((o, gv), &xv) in ga.data.iter_mut().zip(&g.data).zip(&x.data) {
                    let s = sigmoid(xv);
                    *o += gv * s * (1.0 + xv * (1.0 - s));
                }
            }
            &Op::Sigmoid(a) => {
                let ga = slot!(a);
                for ((o, gv), yv) in ga.data.iter_mut().zip(&g.data).zip(&y.data) {
                    *o += gv * yv * (1.0 - yv);
                }
            }
            &Op::Abs(a) => {
                let x = self.value(a);
                let ga = slot!(a);
                for ((o, gv), &xv) in ga.data.iter_mut().zip(&g.data).zip(&x.data) {
                    if xv > 0.0 {
                        *o += gv;
                    } else if xv < 0.0 {
                        *o -= gv;
                    }
                }
            }
            &Op::Square(a) => {
                let x = self.value(a);
                let ga = slot!(a);
                for ((o, gv), xv) in ga.data.iter_mut().zip(&g.data).zip(&x.data) {
                    *o += 2.0 * gv * xv;
                }
            }
            &Op::SqrtEps(a, eps) => {
                let x = self.value(a);
                let ga = slot!(a);
                for ((o, gv), &xv) in ga.data.iter_mut().zip(&g.data).zip(&x.data) {
                    *o += gv * 0.5 / (xv.max(0.0) + eps).sqrt();
                }
            }
            &Op::BlockSqNorm(a, block) => {
                let x = self.value(a);
                let ga = slot!(a);
                for r in 0..x.rows {
                    let gr = g.row(r / block);
                    for ((o, xv), gv) in ga.row_mut(r).iter_mut().zip(x.row(r)).zip(gr) {
                        *o += 2.0 * xv * gv;
                    }
                }
            }
            &Op::BlockDot(a, b, block) => {
                let (x, yv) = (self.value(a), self.value(b));
                let (ca, cb) = (x.cols, yv.cols);
                {
                    let ga = slot!(a);
                    for r in 0..x.rows {
                        let gr = g.row(r / block);
                        let yr = yv.row(r);
                        for p in 0..ca {
                            let gp = &gr[p * cb..(p + 1) * cb];
                            ga.data[r * ca + p] += gp.iter().zip(yr).map(|(s, t)| s * t).sum::<f64>();
                        }
                    }
                }
                let gb = slot!(b);
                for r in 0..x.rows {
                    let gr = g.row(r / block);
                    let xr = x.row(r);
                    for (p, &xv) in xr.iter().enumerate() {
                        for q in 0..cb {
                            gb.data[r * cb + q] += gr[p * cb + q] * xv;
                        }
                    }
                }
            }
            &Op::BlockDotChannels(a, b, block) => {
                let (x, yv) = (self.value(a), self.value(b));
                {
                    let ga = slot!(a);
                    for r in 0..x.rows {
                        for ((o, gv), q) in ga.row_mut(r).iter_mut().zip(g.row(r / block)).zip(yv.row(r)) {
                            *o += gv * q;
                        }
                    }
                }
                let gb = slot!(b);
                for r in 0..x.rows {
                    for ((o, gv), p) in gb.row_mut(r).iter_mut().zip(g.row(r / block)).zip(x.row(r)) {
                        *o += gv * p;
                    }
                }
            }
            &Op::VnLeaky(xa, ka, alpha) => {
                let (xv, kv) = (self.value(xa), self.value(ka));
                let c = xv.cols;
                let mut gx = g.clone();
                let mut gk = Mat::zeros(kv.rows, c);
                for n in 0..xv.rows / 3 {
                    for j in 0..c {
                        let ix = |a: usize| (3 * n + a) * c + j;
                        let dot: f64 = (0..3).map(|a| xv.data[ix(a)] * kv.data[ix(a)]).sum();
                        if dot >= 0.0 {
                            continue;
                        }
                        let kk: f64 = (0..3).map(|a| kv.data[ix(a)].powi(2)).sum::<f64>() + VN_EPS;
                        let gk_dot: f64 = (0..3).map(|a| g.data[ix(a)] * kv.data[ix(a)]).sum();
                        let s = 1.0 - alpha;
                        for a in 0..3 {
                            gx.data[ix(a)] -= s * gk_dot / kk * kv.data[ix(a)];
                            gk.data[ix(a)] -= s
                                * (xv.data[ix(a)] * gk_dot / kk + dot * g.data[ix(a)] / kk
                                    - 2.0 * dot * gk_dot * kv.data[ix(a)] / (kk * kk));
                        }
                    }
                }
                slot!(xa).add_assign(&gx);
                slot!(ka).add_assign(&gk);
            }
            Op::SegmentSoftmax(a, seg) => {
                let n_seg = seg.iter().max().map_or(0, |m| m + 1);
                let mut dots = vec![0.0; n_seg];
                for (e, &s) in seg.iter().enumerate() {
                    dots[s] += y.data[e] * g.data[e];
                }
                let ga = slot!(*a);
                for (e, &s) in seg.iter().enumerate() {
                    ga.data[e] += y.data[e] * (g.data[e] - dots[s]);
                }
            }
            &Op::RowSoftmax(a) => {
                let ga = slot!(a);
                for r in 0..y.rows {
                    let d: f64 = y.row(r).iter().zip(g.row(r)).map(|(p, q)| p * q).sum();
                    for ((o, yv), gv) in ga.row_mut(r).iter_mut().zip(y.row(r)).zip(g.row(r)) {
                        *o += yv * (gv - d);
                    }
                }
            }
            &Op::RowNormalize(a) => {
                let x = self.value(a);
                let ga = slot!(a);
                for r in 0..y.rows {
                    let t: f64 = x.row(r).iter().sum();
                    let d: f64 = y.row(r).iter().zip(g.row(r)).map(|(p, q)| p * q).sum();
                    for (o, gv) in ga.row_mut(r).iter_mut().zip(g.row(r)) {
                        *o += (gv - d) / t;
                    }
                }
            }
            &Op::LnClamped(a) => {
                let x = self.value(a);
                let ga = slot!(a);
                for ((o, gv), &xv) in ga.data.iter_mut().zip(&g.data).zip(&x.data) {
                    if xv > LN_FLOOR {
                        *o += gv / xv;
                    }
                }
            }
            Op::CrossEntropy(a, targets) => {
                let x = self.value(*a);
                let scale = g.data[0];
                let ga = slot!(*a);
                for (r, &t) in targets.iter().enumerate() {
                    let row = x.row(r);
                    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
                    for (c, o) in ga.row_mut(r).iter_mut().enumerate() {
                        let p = (row[c] - m).exp() / z;
                        *o += scale * (p - if c == t { 1.0 } else { 0.0 });
                    }
                }
            }
            &Op::Sum(a) => {
                let gv = g.data[0];
                for o in &mut slot!(a).data {
                    *o += gv;
                }
            }
        }
    }
}
