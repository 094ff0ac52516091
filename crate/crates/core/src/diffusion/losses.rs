//! Training losses, built on the autodiff graph so the same code serves
//! training and the plain-number checks.

use super::schedule::NoiseTable;
use crate::nn::{Graph, Mat, Var};

/// SNR clip used by the position loss weight.
pub const SNR_CLIP: f64 = 10.0;
/// Default weight of the feature loss.
pub const XI: f64 = 100.0;
/// Default weight of the bond loss.
pub const ZETA: f64 = 100.0;

/// `w * sum ||pred - x0||^2` over `(3n) x 1` position columns.
pub fn position_loss(g: &mut Graph, pred: Var, x0: &Mat, weight: f64) -> Var {
    let target = g.input(x0.clone());
    let d = g.sub(pred, target);
    let sq = g.square(d);
    let s = g.sum(sq);
    g.scale(s, weight)
}

/// Approximate categorical posterior from a predicted `v0` (n x K rows) and observed one-hot `v_t`.
pub fn feature_posterior(g: &mut Graph, vt: &Mat, v0_pred: Var, t: usize, table: &NoiseTable) -> Var {
    let k = vt.cols as f64;
    let (a, ab) = (table.alpha[t], table.alpha_bar[t - 1]);
    let left = g.input(vt.map(|x| a * x + (1.0 - a) / k));
    let right = g.scale(v0_pred, ab);
    let right = g.add_const(right, &Mat::scalar((1.0 - ab) / k));
    let prod = g.mul(left, right);
    g.row_normalize(prod)
}

/// Summed `KL(truth || pred)` over rows; `truth` is constant.
pub fn kl_rows(g: &mut Graph, truth: &Mat, pred: Var) -> Var {
    let entropy_term: f64 = truth.data.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum();
    let ln_pred = g.ln_clamped(pred);
    let neg = g.input(truth.map(|p| -p));
    let cross = g.mul(neg, ln_pred);
    let s = g.sum(cross);
    g.add_const(s, &Mat::scalar(entropy_term))
}

/// `sum KL(c(v_t, v0) || c(v_t, v0_pred))` over atoms.
pub fn feature_loss(g: &mut Graph, vt: &Mat, v0: &Mat, v0_pred: Var, t: usize, table: &NoiseTable) -> Var {
    let mut truth = Mat::zeros(vt.rows, vt.cols);
    for r in 0..vt.rows {
        let c = super::process::posterior_features(vt.row(r), v0.row(r), t, table);
        truth.row_mut(r).copy_from_slice(&c);
    }
    let pred = feature_posterior(g, vt, v0_pred, t, table);
    kl_rows(g, &truth, pred)
}

/// `(w / (L-1)) sum_{l<L} CE_l + w CE_L` over the per-layer bond logits.
pub fn bond_loss(g: &mut Graph, layer_logits: &[Var], targets: &[usize], weight: f64) -> Var {
    assert!(!layer_logits.is_empty());
    let l = layer_logits.len();
    let ces: Vec<Var> = layer_logits.iter().map(|&x| g.cross_entropy(x, targets)).collect();
    let last = g.scale(ces[l - 1], weight);
    if l == 1 {
        return last;
    }
    let mut early = ces[0];
    for &c in &ces[1..l - 1] {
        early = g.add(early, c);
    }
    let early = g.scale(early, weight / (l - 1) as f64);
    g.add(early, last)
}

/// `L^x + xi L^v + zeta L^b`.
pub fn total_loss(g: &mut Graph, lx: Var, lv: Var, lb: Var, xi: f64, zeta: f64) -> Var {
    let v = g.scale(lv, xi);
    let b = g.scale(lb, zeta);
    let s = g.add(lx, v);
    g.add(s, b)
}

/// Plain KL divergence in nats with the same clamping as training.
/// Returns the value and the number of clamped entries.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> (f64, usize) {
    let mut g = Graph::standalone();
    let truth = Mat::from_vec(1, p.len(), p.to_vec());
    let qv = g.input(Mat::from_vec(1, q.len(), q.to_vec()));
    let out = kl_rows(&mut g, &truth, qv);
    (g.value(out).item(), g.clamp_count())
}

pub fn loss_positions(pred: &[crate::chem::Vec3], x0: &[crate::chem::Vec3], t: usize, table: &NoiseTable, delta: f64) -> f64 {
    let mut g = Graph::standalone();
    let p = g.input(Mat::from_points(pred));
    let out = position_loss(&mut g, p, &Mat::from_points(x0), table.snr_weight(t, delta));
    g.value(out).item()
}

/// Feature loss on plain rows; returns the value and the clamp count.
pub fn loss_features(vt: &Mat, v0: &Mat, v0_pred: &Mat, t: usize, table: &NoiseTable) -> (f64, usize) {
    let mut g = Graph::standalone();
    let p = g.input(v0_pred.clone());
    let out = feature_loss(&mut g, vt, v0, p, t, table);
    (g.value(out).item(), g.clamp_count())
}

pub fn loss_bonds(layer_logits: &[Mat], targets: &[usize], weight: f64) -> f64 {
    let mut g = Graph::standalone();
    let vars: Vec<Var> = layer_logits.iter().map(|m| g.input(m.clone())).collect();
    let out = bond_loss(&mut g, &vars, targets, weight);
    g.value(out).item()
}

pub fn combine_losses(lx: f64, lv: f64, lb: f64, xi: f64, zeta: f64) -> f64 {
    lx + xi * lv + zeta * lb
}
