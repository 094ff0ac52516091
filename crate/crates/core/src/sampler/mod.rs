//! Reverse diffusion with shape guidance on predicted positions and pocket
//! guidance on sampled ones.

mod counts;
mod guidance;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::{assign_bonds, Atom, AtomClass, BondLengthTable, ChemError, Molecule, ValencyTable, Vec3};
use crate::diffusion::{posterior_features, posterior_positions, sample_categorical, Schedule};
use crate::nn::{Mat, ParamStore};
use crate::predictor::{MolPredictor, PredictorError};
use crate::shape::{build_surface_point_cloud, PointCloud, ShapeEmbedding, ShapeError, ShapeModel};

pub use counts::{cloud_volume, AtomCountHistogram, DEFAULT_BINS};
pub use guidance::{
    parse_pdb_lite, pocket_guide, pocket_guide_point, shape_guide, shape_guide_point, GuidancePoints, PocketAtom,
    PocketModel, RhoTable, RHO_FALLBACK, RHO_HEADER,
};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid sampler input: {0}")]
    Invalid(String),
    #[error("non-finite state at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Chem(#[from] ChemError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Mean neighbour distance above which an atom is pulled towards the shape.
    pub gamma: f64,
    /// Shape guidance runs for `t >= stop_step`.
    pub stop_step: usize,
    pub sigma_range: (f64, f64),
    pub guide_k: usize,
    pub points_per_atom: usize,
    /// Variance of the Gaussians the guidance points are drawn from.
    pub phi: f64,
    pub epsilon_range: (f64, f64),
    pub pocket_k: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            gamma: 0.2,
            stop_step: 300,
            sigma_range: (0.2, 0.8),
            guide_k: 2,
            points_per_atom: 20,
            phi: 0.049,
            epsilon_range: (0.0, 0.5),
            pocket_k: 8,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, steps: usize) -> Result<(), SamplerError> {
        let bad = |m: String| Err(SamplerError::Invalid(m));
        if !(1 < self.stop_step && self.stop_step < steps) {
            return bad(format!("stop_step {} must lie strictly between 1 and {steps}", self.stop_step));
        }
        if !(self.gamma > 0.0) {
            return bad(format!("gamma {} must be positive", self.gamma));
        }
        let (lo, hi) = self.sigma_range;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return bad(format!("sigma range ({lo}, {hi}) must lie inside (0, 1)"));
        }
        if self.guide_k == 0 || self.points_per_atom == 0 || self.pocket_k == 0 {
            return bad("guide_k, points_per_atom and pocket_k must be positive".into());
        }
        if !(self.phi > 0.0) {
            return bad(format!("phi {} must be positive", self.phi));
        }
        let (elo, ehi) = self.epsilon_range;
        if !(0.0 <= elo && elo <= ehi) {
            return bad(format!("epsilon range ({elo}, {ehi}) is not an ordered non-negative interval"));
        }
        Ok(())
    }
}

/// Per-sample generator, independent of how samples are scheduled across threads.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Everything derived from one condition molecule, in its shape frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeCondition {
    pub embedding: ShapeEmbedding,
    pub cloud: PointCloud,
    /// Shape-frame origin in the condition's coordinates.
    pub offset: Vec3,
    pub guidance: GuidancePoints,
}

impl ShapeCondition {
    pub fn new(
        cond: &Molecule,
        model: &ShapeModel,
        store: &ParamStore,
        cfg: &SamplerConfig,
        rng: &mut impl Rng,
    ) -> Result<Self, SamplerError> {
        let (cloud, surface) = build_surface_point_cloud(cond, model.config.n_points, rng)?;
        let embedding = model.encode(store, &cloud)?;
        let centred = cond.translated(-surface.offset);
        let guidance = GuidancePoints::sample(&centred, cfg.points_per_atom, cfg.phi, rng);
        Ok(ShapeCondition {
            embedding,
            cloud,
            offset: surface.offset,
            guidance,
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GenerateOptions<'a> {
    pub n_atoms: usize,
    /// Guidance points in the shape frame; `None` disables shape guidance.
    pub guidance: Option<&'a GuidancePoints>,
    /// Pocket in the shape frame; `None` disables pocket guidance.
    pub pocket: Option<&'a PocketModel>,
    /// Added to the final positions.
    pub offset: Vec3,
}

/// Diagnostics of one reverse step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub step: usize,
    pub shape_guided: Vec<usize>,
    pub pocket_guided: Vec<usize>,
    /// Mean distance of the predicted positions to their nearest guidance point.
    pub guidance_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult {
    pub molecule: Molecule,
    pub trace: Vec<TraceEvent>,
}

fn check_finite(step: usize, x: &[Vec3], what: &str) -> Result<(), SamplerError> {
    if let Some(i) = x.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
        let dump: Vec<String> = x.iter().map(|p| format!("({:.4},{:.4},{:.4})", p.x, p.y, p.z)).collect();
        return Err(SamplerError::NonFinite {
            step,
            detail: format!("{what} atom {i} is non-finite; state [{}]", dump.join(" ")),
        });
    }
    Ok(())
}

/// Denoises one molecule from `x_T ~ N(0, I)`, `v_T ~ C(1/K)`.
pub fn generate(
    model: &MolPredictor,
    store: &ParamStore,
    emb: &ShapeEmbedding,
    schedule: &Schedule,
    cfg: &SamplerConfig,
    opts: GenerateOptions<'_>,
    rng: &mut impl Rng,
) -> Result<GenerationResult, SamplerError> {
    let steps = schedule.steps();
    cfg.validate(steps)?;
    let n = opts.n_atoms;
    if n == 0 {
        return Err(SamplerError::Invalid("cannot generate a molecule with no atoms".into()));
    }
    let k = model.config.num_classes;
    let mut x: Vec<Vec3> = (0..n).map(|_| Vec3::from_fn(|_, _| StandardNormal.sample(&mut *rng))).collect();
    let mut classes: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let mut trace = Vec::with_capacity(steps);

    for t in (1..=steps).rev() {
        let v = Mat::from_fn(n, k, |i, c| if classes[i] == c { 1.0 } else { 0.0 });
        let pred = model.predict(store, &x, &v, emb, t)?;
        let mut x0 = pred.x0;
        check_finite(t, &x0, "predicted")?;
        let mut event = TraceEvent {
            step: t,
            shape_guided: Vec::new(),
            pocket_guided: Vec::new(),
            guidance_distance: None,
        };
        if let Some(q) = opts.guidance.filter(|q| !q.points.is_empty()) {
            if t >= cfg.stop_step {
                event.shape_guided = shape_guide(&mut x0, q, cfg.gamma, cfg.guide_k, cfg.sigma_range, rng);
            }
            event.guidance_distance = Some(q.mean_distance(&x0));
        }

        let (mean, var) = posterior_positions(&x, &x0, t, &schedule.x);
        let sd = var.sqrt();
        x = mean
            .iter()
            .map(|m| m + Vec3::from_fn(|_, _| StandardNormal.sample(&mut *rng)) * sd)
            .collect();
        for (i, c) in classes.iter_mut().enumerate() {
            let probs = posterior_features(v.row(i), pred.v0.row(i), t, &schedule.v);
            if probs.iter().any(|p| !p.is_finite()) {
                return Err(SamplerError::NonFinite {
                    step: t,
                    detail: format!("class posterior of atom {i} is {probs:?}"),
                });
            }
            *c = sample_categorical(&probs, rng);
        }
        if let Some(pocket) = opts.pocket {
            let elements: Vec<_> = classes.iter().map(|&c| class_of(c).element()).collect();
            event.pocket_guided = pocket_guide(&mut x, &elements, pocket, rng);
        }
        check_finite(t, &x, "sampled")?;
        trace.push(event);
    }

    let positions: Vec<Vec3> = x.iter().map(|p| p + opts.offset).collect();
    let atom_classes: Vec<AtomClass> = classes.iter().map(|&c| class_of(c)).collect();
    let bonds = assign_bonds(&positions, &atom_classes, &BondLengthTable::default(), &ValencyTable::default());
    let atoms = atom_classes.iter().zip(&positions).map(|(&c, &p)| Atom::from_class(c, p)).collect();
    let molecule = Molecule::new("generated", atoms, bonds)?;
    Ok(GenerationResult { molecule, trace })
}

fn class_of(c: usize) -> AtomClass {
    AtomClass::from_index(c).expect("class index below the class count")
}

/// One sample per `(index, atom count)`, each with its own [`sample_rng`] stream.
#[allow(clippy::too_many_arguments)]
pub fn generate_many(
    model: &MolPredictor,
    store: &ParamStore,
    cond: &ShapeCondition,
    schedule: &Schedule,
    cfg: &SamplerConfig,
    counts: &[usize],
    shape_guidance: bool,
    pocket: Option<&PocketModel>,
    seed: u64,
) -> Vec<Result<GenerationResult, SamplerError>> {
    counts
        .par_iter()
        .enumerate()
        .map(|(i, &n)| {
            let mut rng = sample_rng(seed, i as u64);
            let opts = GenerateOptions {
                n_atoms: n,
                guidance: shape_guidance.then_some(&cond.guidance),
                pocket,
                offset: cond.offset,
            };
            generate(model, store, &cond.embedding, schedule, cfg, opts, &mut rng)
        })
        .collect()
}
