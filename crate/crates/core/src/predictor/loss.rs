use rand::Rng;

use super::{MolPredictor, PredictorError};
use crate::chem::{Molecule, Vec3};
use crate::diffusion::{
    bond_loss, bond_targets, feature_loss, gaussian_noise, one_hot_rows, position_loss, q_sample_features,
    q_sample_positions, total_loss, Schedule, SNR_CLIP, XI, ZETA,
};
use crate::nn::{Graph, Mat, Var};

/// A molecule pushed forward to step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisedSample {
    pub t: usize,
    pub xt: Vec<Vec3>,
    pub vt: Vec<usize>,
}

pub fn noised_sample(mol: &Molecule, t: usize, schedule: &Schedule, num_classes: usize, rng: &mut impl Rng) -> NoisedSample {
    let x0 = mol.positions();
    let noise = gaussian_noise(x0.len(), rng);
    let xt = q_sample_positions(&x0, t, &schedule.x, &noise);
    let v0: Vec<usize> = mol.classes().iter().map(|c| c.index()).collect();
    let vt = q_sample_features(&v0, t, &schedule.v, num_classes, rng);
    NoisedSample { t, xt, vt }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub xi: f64,
    pub zeta: f64,
    /// SNR clip of the position and bond weights.
    pub delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            xi: XI,
            zeta: ZETA,
            delta: SNR_CLIP,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub positions: Var,
    pub features: Var,
    pub bonds: Var,
}

/// `L^x + xi L^v + zeta L^b` for one noised molecule. `mol` must already sit in the shape frame.
#[allow(clippy::too_many_arguments)]
pub fn denoising_loss(
    g: &mut Graph,
    model: &MolPredictor,
    mol: &Molecule,
    h: Var,
    inv: Var,
    sample: &NoisedSample,
    schedule: &Schedule,
    weights: LossWeights,
) -> Result<LossTerms, PredictorError> {
    let k = model.config.num_classes;
    let t = sample.t;
    schedule.x.validate_step(t).map_err(|e| PredictorError::Invalid(e.to_string()))?;
    let vt = one_hot_rows(&sample.vt, k);
    let v0_idx: Vec<usize> = mol.classes().iter().map(|c| c.index()).collect();
    let v0 = one_hot_rows(&v0_idx, k);
    let out = model.forward(g, &sample.xt, &vt, h, inv, t)?;
    let w = schedule.x.snr_weight(t, weights.delta);
    let lx = position_loss(g, out.x0, &Mat::from_points(&mol.positions()), w);
    let lv = feature_loss(g, &vt, &v0, out.v0, t, &schedule.v);
    let lb = if out.bond_logits.is_empty() {
        g.input(Mat::scalar(0.0))
    } else {
        let targets = bond_targets(mol, &out.edges);
        bond_loss(g, &out.bond_logits, &targets, w)
    };
    let total = total_loss(g, lx, lv, lb, weights.xi, weights.zeta);
    Ok(LossTerms {
        total,
        positions: lx,
        features: lv,
        bonds: lb,
    })
}
