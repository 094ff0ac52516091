//! Model bundles and the end-to-end steps behind each CLI command.

use std::fmt::Write as _;
use std::path::Path;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, RngState};
use super::config::RunConfig;
use super::train::{prepare_samples, restore, train_diffusion, TrainState};
use super::PipelineError;
use crate::chem::{Molecule, ValencyTable};
use crate::diffusion::Schedule;
use crate::metrics::{
    compare_geometry, desirable_rate, geometry_stats, intersecting_ring_types, stability_rates, DesirableReport,
    NoveltyIndex,
};
use crate::nn::{Mat, ParamStore};
use crate::predictor::MolPredictor;
use crate::sampler::{
    cloud_volume, generate_many, sample_rng, AtomCountHistogram, GenerationResult, PocketAtom, PocketModel, RhoTable,
    SamplerError, ShapeCondition,
};
use crate::shape::{make_sample, pretrain_se, SeTrainReport, ShapeModel};

pub const KIND_SHAPE: &str = "shape";
pub const KIND_DIFFUSION: &str = "diffusion";

/// Frozen or trainable shape encoder with its parameters.
#[derive(Debug, Clone)]
pub struct ShapeBundle {
    pub model: ShapeModel,
    pub store: ParamStore,
}

impl ShapeBundle {
    pub fn init(cfg: &RunConfig) -> Self {
        let mut store = ParamStore::new();
        let model = ShapeModel::new(cfg.shape, &mut store, &mut ChaCha8Rng::seed_from_u64(cfg.shape_seed));
        ShapeBundle { model, store }
    }

    pub fn to_checkpoint(&self, cfg: &RunConfig) -> Checkpoint {
        let mut ck = Checkpoint::new(0, RngState::capture(&ChaCha8Rng::seed_from_u64(0)));
        ck.meta.insert("kind".into(), KIND_SHAPE.into());
        ck.meta.insert("config".into(), cfg.to_text());
        ck.push_store("se/", &self.store);
        ck
    }

    /// Loads a shape checkpoint or the encoder inside a diffusion checkpoint.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, RunConfig), PipelineError> {
        let cfg = RunConfig::parse(ck.meta("config")?)?;
        let mut b = ShapeBundle::init(&cfg);
        ck.load_store("se/", &mut b.store)?;
        Ok((b, cfg))
    }
}

/// Pre-trains the shape encoder; validation falls back to training molecules when `val` is empty.
pub fn train_shape(cfg: &RunConfig, train: &[Molecule], val: &[Molecule]) -> Result<(ShapeBundle, SeTrainReport), PipelineError> {
    let mut b = ShapeBundle::init(cfg);
    let sc = &cfg.shape;
    let seed = cfg.train_shape.seed;
    let build = |mols: &[Molecule], offset: u64| -> Result<Vec<_>, PipelineError> {
        mols.iter()
            .enumerate()
            .map(|(i, m)| Ok(make_sample(m, sc.n_points, sc.n_queries, &mut sample_rng(seed, offset + i as u64))?))
            .collect()
    };
    let train_s = build(train, 0)?;
    let val_s = build(val, 1 << 32)?;
    let report = pretrain_se(&b.model, &mut b.store, &train_s, &val_s, &cfg.train_shape)?;
    Ok((b, report))
}

/// Everything needed to train or sample the diffusion model.
#[derive(Debug, Clone)]
pub struct DiffusionBundle {
    pub config: RunConfig,
    pub shape: ShapeBundle,
    pub model: MolPredictor,
    pub store: ParamStore,
    pub schedule: Schedule,
    pub histogram: AtomCountHistogram,
}

fn schedule_row(v: &[f64]) -> Mat {
    Mat::from_vec(1, v.len(), v.to_vec())
}

impl DiffusionBundle {
    pub fn init(cfg: &RunConfig, shape: ShapeBundle, histogram: AtomCountHistogram) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let model = MolPredictor::new(
            cfg.predictor_config(),
            &mut store,
            &mut ChaCha8Rng::seed_from_u64(cfg.predictor.seed),
        )?;
        Ok(DiffusionBundle {
            config: cfg.clone(),
            shape,
            model,
            store,
            schedule: cfg.schedule_tables()?,
            histogram,
        })
    }

    pub fn to_checkpoint(&self, state: &TrainState) -> Checkpoint {
        let mut ck = Checkpoint::new(0, RngState::capture(&state.rng));
        ck.meta.insert("kind".into(), KIND_DIFFUSION.into());
        ck.meta.insert("config".into(), self.config.to_text());
        ck.meta.insert(
            "histogram".into(),
            serde_json::to_string(&self.histogram).expect("histogram serialises"),
        );
        ck.push_store("se/", &self.shape.store);
        ck.tensors.push(("schedule.beta_x".into(), schedule_row(&self.schedule.x.beta)));
        ck.tensors.push(("schedule.beta_v".into(), schedule_row(&self.schedule.v.beta)));
        state.store_into(&mut ck, &self.store);
        ck
    }

    /// Restores the bundle with its current (not best) parameters and the training state.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, TrainState), PipelineError> {
        if ck.meta("kind")? != KIND_DIFFUSION {
            return Err(PipelineError::Checkpoint(format!("expected a {KIND_DIFFUSION} checkpoint, found {:?}", ck.meta("kind")?)));
        }
        let (shape, cfg) = ShapeBundle::from_checkpoint(ck)?;
        let histogram: AtomCountHistogram = serde_json::from_str(ck.meta("histogram")?)
            .map_err(|e| PipelineError::Checkpoint(format!("bad histogram: {e}")))?;
        let mut b = DiffusionBundle::init(&cfg, shape, histogram)?;
        for (name, table) in [("schedule.beta_x", &b.schedule.x.beta), ("schedule.beta_v", &b.schedule.v.beta)] {
            let stored = ck.tensor(name).ok_or_else(|| PipelineError::Checkpoint(format!("missing tensor {name}")))?;
            if stored.data != *table {
                return Err(PipelineError::Checkpoint(format!("{name} differs from the configured schedule")));
            }
        }
        let state = TrainState::load_from(ck, &cfg.train_diff, &mut b.store)?;
        Ok((b, state))
    }

    /// Loads the best-validation parameters recorded in `state`.
    pub fn use_best(&mut self, state: &TrainState) {
        restore(&mut self.store, &state.best);
    }

    /// Loads a diffusion checkpoint ready for sampling.
    pub fn load_for_sampling(path: &Path) -> Result<Self, PipelineError> {
        let ck = Checkpoint::load(path)?;
        let (mut b, state) = Self::from_checkpoint(&ck)?;
        b.use_best(&state);
        Ok(b)
    }
}

/// Trains (or resumes) the diffusion model. The checkpoint at `out` is rewritten on
/// every validation improvement and at the end, so an aborted run leaves the last good one.
pub fn train_diff(
    mut bundle: DiffusionBundle,
    mut state: TrainState,
    train: &[Molecule],
    val: &[Molecule],
    out: Option<&Path>,
) -> Result<(DiffusionBundle, TrainState), PipelineError> {
    let seed = bundle.config.data.seed;
    let train_s = prepare_samples(train, &bundle.shape.model, &bundle.shape.store, seed)?;
    let val_s = prepare_samples(val, &bundle.shape.model, &bundle.shape.store, seed ^ 0x9e37_79b9)?;
    let cfg = bundle.config.train_diff.clone();
    let schedule = bundle.schedule.clone();
    let model = bundle.model.clone();
    let shape = bundle.shape.clone();
    let (config, histogram) = (bundle.config.clone(), bundle.histogram.clone());
    let save = |state: &TrainState, store: &ParamStore| -> Result<(), PipelineError> {
        if let Some(path) = out {
            let view = DiffusionBundle {
                config: config.clone(),
                shape: shape.clone(),
                model: model.clone(),
                store: store.clone(),
                schedule: schedule.clone(),
                histogram: histogram.clone(),
            };
            view.to_checkpoint(state).save(path)?;
        }
        Ok(())
    };
    train_diffusion(&model, &mut bundle.store, &train_s, &val_s, &schedule, &cfg, &mut state, &save)?;
    save(&state, &bundle.store)?;
    info!(
        "diffusion training finished at step {}; best validation {:.4} at step {}",
        state.step, state.best_val, state.best_step
    );
    Ok((bundle, state))
}

#[derive(Debug, Clone)]
pub struct GenerateRequest<'a> {
    pub condition: &'a Molecule,
    pub n: usize,
    pub shape_guidance: bool,
    /// Pocket atoms in the condition's coordinates.
    pub pocket: Option<&'a [PocketAtom]>,
    pub rho: Option<&'a RhoTable>,
    pub seed: u64,
}

#[derive(Debug)]
pub struct GenerateOutput {
    pub condition: ShapeCondition,
    pub atom_counts: Vec<usize>,
    pub results: Vec<Result<GenerationResult, SamplerError>>,
}

/// Samples `n` molecules for one condition; every random choice derives from `seed`.
pub fn generate_for(bundle: &DiffusionBundle, req: &GenerateRequest<'_>) -> Result<GenerateOutput, PipelineError> {
    let sc = &bundle.config.generate.sampler;
    let cond = ShapeCondition::new(
        req.condition,
        &bundle.shape.model,
        &bundle.shape.store,
        sc,
        &mut sample_rng(req.seed, u64::MAX),
    )?;
    let volume = cloud_volume(&cond.cloud);
    let mut count_rng = sample_rng(req.seed, u64::MAX - 1);
    let atom_counts: Vec<usize> = (0..req.n)
        .map(|_| {
            bundle
                .histogram
                .sample(volume, &mut count_rng)
                .ok_or_else(|| PipelineError::Data("the atom-count histogram is empty".into()))
        })
        .collect::<Result<_, _>>()?;
    let pocket = req.pocket.map(|atoms| {
        PocketModel {
            atoms: atoms.to_vec(),
            rho: req.rho.cloned().unwrap_or_default(),
            epsilon_range: sc.epsilon_range,
            k: sc.pocket_k,
        }
        .translated(-cond.offset)
    });
    let results = generate_many(
        &bundle.model,
        &bundle.store,
        &cond,
        &bundle.schedule,
        sc,
        &atom_counts,
        req.shape_guidance,
        pocket.as_ref(),
        req.seed,
    );
    Ok(GenerateOutput {
        condition: cond,
        atom_counts,
        results,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: String,
    pub desirable: DesirableReport,
    pub atom_stability: f64,
    pub molecule_stability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryDivergence {
    pub name: String,
    pub js: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub delta_g: f64,
    pub conditions: Vec<ConditionReport>,
    pub mean_desirable_pct: f64,
    pub mean_diversity: Option<f64>,
    pub mean_novelty: Option<f64>,
    pub mean_shape_similarity: f64,
    pub mean_graph_similarity: f64,
    pub atom_stability: f64,
    pub molecule_stability: f64,
    /// Divergences of the pooled generated set against the reference corpus.
    pub geometry: Vec<GeometryDivergence>,
    pub intersecting_ring_types: Option<usize>,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Scores each generated set against its condition. `reference` (usually the
/// training corpus) feeds the geometry divergences and, unless `index` is
/// given, novelty.
pub fn evaluate(
    sets: &[(Molecule, Vec<Molecule>)],
    reference: Option<&[Molecule]>,
    index: Option<&NoveltyIndex>,
    delta_g: f64,
) -> Result<EvalReport, PipelineError> {
    let valency = ValencyTable::default();
    let built = match index {
        Some(_) => None,
        None => reference.map(NoveltyIndex::build),
    };
    let index = index.or(built.as_ref());
    let conditions: Vec<ConditionReport> = sets
        .iter()
        .map(|(cond, gen)| {
            let (a, m) = stability_rates(gen, &valency);
            ConditionReport {
                condition: cond.name.clone(),
                desirable: desirable_rate(cond, gen, delta_g, index),
                atom_stability: a,
                molecule_stability: m,
            }
        })
        .collect();
    let pooled: Vec<Molecule> = sets.iter().flat_map(|(_, g)| g.iter().cloned()).collect();
    let (atom_stability, molecule_stability) = stability_rates(&pooled, &valency);
    let n = conditions.len().max(1) as f64;
    let (geometry, rings) = match reference {
        Some(r) => {
            let (gh, rh) = (geometry_stats(&pooled), geometry_stats(r));
            let g = compare_geometry(&gh, &rh)?
                .into_iter()
                .map(|(name, js)| GeometryDivergence { name: name.into(), js })
                .collect();
            (g, Some(intersecting_ring_types(&gh, &rh)))
        }
        None => (Vec::new(), None),
    };
    Ok(EvalReport {
        delta_g,
        mean_desirable_pct: conditions.iter().map(|c| c.desirable.desirable_pct).sum::<f64>() / n,
        mean_diversity: mean_defined(conditions.iter().map(|c| c.desirable.diversity)),
        mean_novelty: mean_defined(conditions.iter().map(|c| c.desirable.novelty)),
        mean_shape_similarity: conditions.iter().map(|c| c.desirable.mean_shape).sum::<f64>() / n,
        mean_graph_similarity: conditions.iter().map(|c| c.desirable.mean_graph).sum::<f64>() / n,
        atom_stability,
        molecule_stability,
        geometry,
        intersecting_ring_types: rings,
        conditions,
    })
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or("undefined".into(), |x| format!("{x:.digits$}"))
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<24} {:>5} {:>8} {:>9} {:>8} {:>8} {:>8} {:>8}",
            "condition", "n", "d%", "div", "nov%", "sim_s", "sim_g", "mol_stb"
        );
        for c in &self.conditions {
            let d = &c.desirable;
            let _ = writeln!(
                s,
                "{:<24} {:>5} {:>8.1} {:>9} {:>8} {:>8.3} {:>8.3} {:>8.3}",
                c.condition.chars().take(24).collect::<String>(),
                d.total,
                d.desirable_pct,
                opt(d.diversity, 3),
                opt(d.novelty, 1),
                d.mean_shape,
                d.mean_graph,
                c.molecule_stability
            );
        }
        let _ = writeln!(
            s,
            "{:<24} {:>5} {:>8.1} {:>9} {:>8} {:>8.3} {:>8.3} {:>8.3}",
            "mean",
            "",
            self.mean_desirable_pct,
            opt(self.mean_diversity, 3),
            opt(self.mean_novelty, 1),
            self.mean_shape_similarity,
            self.mean_graph_similarity,
            self.molecule_stability
        );
        let _ = writeln!(s, "\ndelta_g = {}; atom stability {:.3}", self.delta_g, self.atom_stability);
        for g in &self.geometry {
            let _ = writeln!(s, "JS {:<16} {}", g.name, opt(g.js, 4));
        }
        if let Some(r) = self.intersecting_ring_types {
            let _ = writeln!(s, "intersecting top-10 ring types: {r}");
        }
        s
    }
}
