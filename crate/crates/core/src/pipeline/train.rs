//! Diffusion-model training on frozen shape embeddings.

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::checkpoint::{Checkpoint, RngState};
use super::PipelineError;
use crate::chem::Molecule;
use crate::diffusion::Schedule;
use crate::nn::{batch_gradients, batch_losses, Adam, AdamConfig, Graph, Mat, ParamStore, PlateauScheduler};
use crate::predictor::{denoising_loss, noised_sample, LossWeights, MolPredictor, NoisedSample};
use crate::sampler::sample_rng;
use crate::shape::{build_surface_point_cloud, ShapeEmbedding, ShapeModel};

#[derive(Debug, Clone, PartialEq)]
pub struct DiffTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub decay_factor: f64,
    pub min_lr: f64,
    pub patience: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub weights: LossWeights,
}

impl Default for DiffTrainConfig {
    fn default() -> Self {
        DiffTrainConfig {
            steps: 100_000,
            batch_size: 32,
            lr: 1e-3,
            beta1: 0.95,
            beta2: 0.999,
            decay_factor: 0.6,
            min_lr: 1e-5,
            patience: 10,
            eval_every: 2000,
            seed: 0,
            weights: LossWeights::default(),
        }
    }
}

/// A training molecule moved into its shape frame, with its frozen embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffSample {
    pub mol: Molecule,
    pub emb: ShapeEmbedding,
}

/// Embeds every molecule once with the frozen encoder; molecule `i` samples its
/// surface from stream `i` of `seed`.
pub fn prepare_samples(
    mols: &[Molecule],
    se: &ShapeModel,
    se_store: &ParamStore,
    seed: u64,
) -> Result<Vec<DiffSample>, PipelineError> {
    mols.par_iter()
        .enumerate()
        .map(|(i, m)| {
            let mut rng = sample_rng(seed, i as u64);
            let (cloud, surface) = build_surface_point_cloud(m, se.config.n_points, &mut rng)?;
            let emb = se.encode(se_store, &cloud)?;
            Ok(DiffSample {
                mol: m.translated(-surface.offset),
                emb,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffEval {
    pub step: usize,
    pub val_loss: f64,
    pub lr: f64,
}

/// Everything needed to continue a run bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Next step to run.
    pub step: usize,
    pub opt: Adam,
    pub sched: PlateauScheduler,
    pub rng: ChaCha8Rng,
    pub best: Vec<Mat>,
    pub best_val: f64,
    pub best_step: usize,
    pub curve: Vec<f64>,
    pub evals: Vec<DiffEval>,
    /// Step of the last scheduled evaluation, so a resumed run does not repeat it.
    pub last_eval: Option<usize>,
}

fn snapshot(store: &ParamStore) -> Vec<Mat> {
    store.iter().map(|(_, _, v)| v.clone()).collect()
}

pub fn restore(store: &mut ParamStore, values: &[Mat]) {
    let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
    for (id, v) in ids.into_iter().zip(values) {
        *store.value_mut(id) = v.clone();
    }
}

fn bits(x: f64) -> String {
    format!("{:016x}", x.to_bits())
}

fn unbits(s: &str) -> Result<f64, PipelineError> {
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|_| PipelineError::Checkpoint(format!("bad float field {s:?}")))
}

impl TrainState {
    pub fn fresh(cfg: &DiffTrainConfig, store: &ParamStore) -> Self {
        TrainState {
            step: 0,
            opt: Adam::new(
                AdamConfig {
                    lr: cfg.lr,
                    beta1: cfg.beta1,
                    beta2: cfg.beta2,
                    ..AdamConfig::default()
                },
                store,
            ),
            sched: PlateauScheduler::new(cfg.decay_factor, cfg.patience, cfg.min_lr),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            best: snapshot(store),
            best_val: f64::INFINITY,
            best_step: 0,
            curve: Vec::new(),
            evals: Vec::new(),
            last_eval: None,
        }
    }

    /// Writes the state and the current parameters (under `param/`) into `ck`.
    pub fn store_into(&self, ck: &mut Checkpoint, store: &ParamStore) {
        ck.step = self.step as u64;
        ck.rng = RngState::capture(&self.rng);
        ck.push_store("param/", store);
        let names: Vec<String> = store.iter().map(|(_, n, _)| n.to_string()).collect();
        for (k, n) in names.iter().enumerate() {
            ck.tensors.push((format!("adam.m/{n}"), self.opt.m[k].clone()));
            ck.tensors.push((format!("adam.v/{n}"), self.opt.v[k].clone()));
            ck.tensors.push((format!("best/{n}"), self.best[k].clone()));
        }
        ck.tensors.push(("train.curve".into(), Mat::from_vec(1, self.curve.len(), self.curve.clone())));
        let ev: Vec<f64> = self.evals.iter().flat_map(|e| [e.step as f64, e.val_loss, e.lr]).collect();
        ck.tensors.push(("train.evals".into(), Mat::from_vec(self.evals.len(), 3, ev)));
        let c = self.opt.config;
        for (k, v) in [
            ("train.lr", bits(c.lr)),
            ("train.beta1", bits(c.beta1)),
            ("train.beta2", bits(c.beta2)),
            ("train.eps", bits(c.eps)),
            ("train.adam_step", self.opt.step.to_string()),
            ("train.sched_best", bits(self.sched.best)),
            ("train.sched_bad", self.sched.bad_evals.to_string()),
            ("train.best_val", bits(self.best_val)),
            ("train.best_step", self.best_step.to_string()),
            ("train.last_eval", self.last_eval.map_or("none".into(), |s| s.to_string())),
        ] {
            ck.meta.insert(k.into(), v);
        }
    }

    /// Restores the state and loads the current parameters into `store`.
    pub fn load_from(ck: &Checkpoint, cfg: &DiffTrainConfig, store: &mut ParamStore) -> Result<Self, PipelineError> {
        ck.load_store("param/", store)?;
        let int = |k: &str| -> Result<u64, PipelineError> {
            ck.meta(k)?
                .parse()
                .map_err(|_| PipelineError::Checkpoint(format!("bad integer field {k}")))
        };
        let names: Vec<String> = store.iter().map(|(_, n, _)| n.to_string()).collect();
        let get = |prefix: &str| -> Result<Vec<Mat>, PipelineError> {
            names
                .iter()
                .map(|n| {
                    ck.tensor(&format!("{prefix}/{n}"))
                        .cloned()
                        .ok_or_else(|| PipelineError::Checkpoint(format!("missing tensor {prefix}/{n}")))
                })
                .collect()
        };
        let missing = |n: &str| PipelineError::Checkpoint(format!("missing tensor {n}"));
        let curve = ck.tensor("train.curve").ok_or_else(|| missing("train.curve"))?.data.clone();
        let ev = ck.tensor("train.evals").ok_or_else(|| missing("train.evals"))?;
        let evals = (0..ev.rows)
            .map(|r| DiffEval {
                step: ev.at(r, 0) as usize,
                val_loss: ev.at(r, 1),
                lr: ev.at(r, 2),
            })
            .collect();
        let mut sched = PlateauScheduler::new(cfg.decay_factor, cfg.patience, cfg.min_lr);
        sched.best = unbits(ck.meta("train.sched_best")?)?;
        sched.bad_evals = int("train.sched_bad")? as usize;
        let last_eval = match ck.meta("train.last_eval")? {
            "none" => None,
            s => Some(s.parse().map_err(|_| PipelineError::Checkpoint("bad train.last_eval".into()))?),
        };
        Ok(TrainState {
            step: ck.step as usize,
            opt: Adam {
                config: AdamConfig {
                    lr: unbits(ck.meta("train.lr")?)?,
                    beta1: unbits(ck.meta("train.beta1")?)?,
                    beta2: unbits(ck.meta("train.beta2")?)?,
                    eps: unbits(ck.meta("train.eps")?)?,
                },
                step: int("train.adam_step")?,
                m: get("adam.m")?,
                v: get("adam.v")?,
            },
            sched,
            rng: ck.rng.restore(),
            best: get("best")?,
            best_val: unbits(ck.meta("train.best_val")?)?,
            best_step: int("train.best_step")? as usize,
            curve,
            evals,
            last_eval,
        })
    }
}

fn item_loss(
    g: &mut Graph,
    model: &MolPredictor,
    s: &DiffSample,
    noised: &NoisedSample,
    schedule: &Schedule,
    weights: LossWeights,
) -> Result<crate::nn::Var, PipelineError> {
    let h = g.input(s.emb.h.clone());
    let inv = g.input(s.emb.inv.clone());
    Ok(denoising_loss(g, model, &s.mol, h, inv, noised, schedule, weights)?.total)
}

/// Mean loss over `set`, each molecule noised at a step drawn from a fixed stream.
pub fn validation_loss(
    model: &MolPredictor,
    store: &ParamStore,
    set: &[DiffSample],
    schedule: &Schedule,
    cfg: &DiffTrainConfig,
) -> Result<f64, PipelineError> {
    let mut rng = sample_rng(cfg.seed, u64::MAX);
    let k = model.config.num_classes;
    let items: Vec<(usize, NoisedSample)> = set
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let t = rng.random_range(1..=schedule.steps());
            (i, noised_sample(&s.mol, t, schedule, k, &mut rng))
        })
        .collect();
    let ls = batch_losses(store, &items, |g, (i, n)| item_loss(g, model, &set[*i], n, schedule, cfg.weights))?;
    Ok(ls.iter().sum::<f64>() / ls.len() as f64)
}

/// Trains until `cfg.steps`, continuing from `state`.
///
/// Scheduled evaluations run every `eval_every` steps from step 0; a final
/// evaluation off that grid records the end point without touching the learning
/// rate. `on_best` runs whenever the validation loss improves, with the store
/// holding the improved parameters. A non-finite loss aborts with the step.
#[allow(clippy::too_many_arguments)]
pub fn train_diffusion(
    model: &MolPredictor,
    store: &mut ParamStore,
    train: &[DiffSample],
    val: &[DiffSample],
    schedule: &Schedule,
    cfg: &DiffTrainConfig,
    state: &mut TrainState,
    mut on_best: impl FnMut(&TrainState, &ParamStore) -> Result<(), PipelineError>,
) -> Result<(), PipelineError> {
    if train.is_empty() {
        return Err(PipelineError::Data("no training molecules".into()));
    }
    let val = if val.is_empty() { train } else { val };
    let every = cfg.eval_every.max(1);
    let k = model.config.num_classes;
    while state.step <= cfg.steps {
        let step = state.step;
        let scheduled = step % every == 0 && state.last_eval != Some(step);
        let final_step = step == cfg.steps && state.evals.last().map(|e| e.step) != Some(step);
        if scheduled || final_step {
            let v = validation_loss(model, store, val, schedule, cfg)?;
            if !v.is_finite() {
                return Err(PipelineError::NonFinite {
                    step,
                    detail: format!("validation loss {v}"),
                });
            }
            info!("diffusion step {step}: val loss {v:.4} lr {:.2e}", state.opt.config.lr);
            state.evals.push(DiffEval {
                step,
                val_loss: v,
                lr: state.opt.config.lr,
            });
            if v < state.best_val {
                state.best_val = v;
                state.best_step = step;
                state.best = snapshot(store);
                on_best(state, store)?;
            }
            if scheduled {
                state.last_eval = Some(step);
                if step > 0 {
                    state.opt.config.lr = state.sched.observe(v, state.opt.config.lr);
                }
            }
        }
        if step == cfg.steps {
            break;
        }
        let items: Vec<(usize, NoisedSample)> = (0..cfg.batch_size.max(1))
            .map(|_| {
                let i = state.rng.random_range(0..train.len());
                let t = state.rng.random_range(1..=schedule.steps());
                (i, noised_sample(&train[i].mol, t, schedule, k, &mut state.rng))
            })
            .collect();
        let (losses, mut grads) =
            batch_gradients(store, &items, |g, (i, n)| item_loss(g, model, &train[*i], n, schedule, cfg.weights))?;
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        if !mean.is_finite() || !grads.is_finite() {
            let bad = losses.iter().position(|l| !l.is_finite()).map(|p| (items[p].0, items[p].1.t));
            return Err(PipelineError::NonFinite {
                step,
                detail: format!("batch loss {mean}; first bad (molecule, t) {bad:?}; grad norm {}", grads.norm()),
            });
        }
        grads.scale(1.0 / losses.len() as f64);
        debug!("diffusion step {step}: batch loss {mean:.4}");
        state.curve.push(mean);
        state.opt.update(store, &grads);
        state.step = step + 1;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{Atom, Bond, BondOrder, Element, Vec3};
    use crate::predictor::PredictorConfig;

    fn tiny_model(store: &mut ParamStore) -> MolPredictor {
        let cfg = PredictorConfig {
            scalar_hidden: 8,
            vector_hidden: 4,
            layers: 2,
            neighbors: 3,
            num_classes: crate::chem::NUM_ATOM_CLASSES,
            time_dim: 4,
            attn_dim: 4,
            heads: 1,
            d_p: 4,
        };
        MolPredictor::new(cfg, store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    fn samples() -> Vec<DiffSample> {
        let water = Molecule::new(
            "w",
            vec![
                Atom::new(Element::O, Vec3::zeros()),
                Atom::new(Element::H, Vec3::new(0.96, 0.0, 0.0)),
                Atom::new(Element::H, Vec3::new(-0.24, 0.93, 0.0)),
            ],
            vec![Bond::new(0, 1, BondOrder::Single), Bond::new(0, 2, BondOrder::Single)],
        )
        .unwrap();
        let co = Molecule::new(
            "c",
            vec![
                Atom::new(Element::C, Vec3::zeros()),
                Atom::new(Element::O, Vec3::new(1.2, 0.0, 0.0)),
                Atom::new(Element::H, Vec3::new(-0.5, 0.9, 0.0)),
                Atom::new(Element::H, Vec3::new(-0.5, -0.9, 0.0)),
            ],
            vec![
                Bond::new(0, 1, BondOrder::Double),
                Bond::new(0, 2, BondOrder::Single),
                Bond::new(0, 3, BondOrder::Single),
            ],
        )
        .unwrap();
        [water, co]
            .into_iter()
            .enumerate()
            .map(|(i, mol)| DiffSample {
                mol,
                emb: ShapeEmbedding {
                    h: Mat::from_fn(3, 4, |r, c| ((r + c + i) as f64 * 0.4).cos()),
                    inv: Mat::from_fn(1, 4, |_, c| c as f64 * 0.2 + i as f64),
                },
            })
            .collect()
    }

    fn cfg(steps: usize) -> DiffTrainConfig {
        DiffTrainConfig {
            steps,
            batch_size: 3,
            lr: 5e-3,
            eval_every: 4,
            patience: 0,
            ..DiffTrainConfig::default()
        }
    }

    #[test]
    fn zero_steps_keep_initialisation() {
        let mut store = ParamStore::new();
        let model = tiny_model(&mut store);
        let init = snapshot(&store);
        let schedule = Schedule::standard(50).unwrap();
        let c = cfg(0);
        let mut state = TrainState::fresh(&c, &store);
        train_diffusion(&model, &mut store, &samples(), &[], &schedule, &c, &mut state, |_, _| Ok(())).unwrap();
        assert_eq!(snapshot(&store), init);
        assert_eq!(state.best, init);
        assert_eq!(state.evals.len(), 1);
    }

    #[test]
    fn resume_reproduces_curve_bitwise() {
        let schedule = Schedule::standard(50).unwrap();
        let data = samples();
        let full_cfg = cfg(10);
        let mut store = ParamStore::new();
        let model = tiny_model(&mut store);
        let init = snapshot(&store);
        let mut full = TrainState::fresh(&full_cfg, &store);
        train_diffusion(&model, &mut store, &data, &[], &schedule, &full_cfg, &mut full, |_, _| Ok(())).unwrap();
        let full_params = snapshot(&store);

        let mut store2 = ParamStore::new();
        let model2 = tiny_model(&mut store2);
        restore(&mut store2, &init);
        let mut part = TrainState::fresh(&full_cfg, &store2);
        train_diffusion(&model2, &mut store2, &data, &[], &schedule, &cfg(4), &mut part, |_, _| Ok(())).unwrap();
        let mut ck = Checkpoint::new(0, RngState::capture(&part.rng));
        part.store_into(&mut ck, &store2);
        let mut buf = Vec::new();
        ck.write(&mut buf).unwrap();
        let ck = Checkpoint::read(&mut buf.as_slice()).unwrap();

        let mut store3 = ParamStore::new();
        let model3 = tiny_model(&mut store3);
        let mut resumed = TrainState::load_from(&ck, &full_cfg, &mut store3).unwrap();
        train_diffusion(&model3, &mut store3, &data, &[], &schedule, &full_cfg, &mut resumed, |_, _| Ok(())).unwrap();

        assert_eq!(resumed.curve.len(), 10);
        assert!(resumed.curve.iter().zip(&full.curve).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(snapshot(&store3), full_params);
        assert_eq!(resumed.opt, full.opt);
    }

    #[test]
    fn non_finite_loss_aborts() {
        let schedule = Schedule::standard(50).unwrap();
        let mut store = ParamStore::new();
        let model = tiny_model(&mut store);
        let id = store.iter().next().unwrap().0;
        store.value_mut(id).data[0] = f64::NAN;
        let c = cfg(3);
        let mut state = TrainState::fresh(&c, &store);
        let r = train_diffusion(&model, &mut store, &samples(), &[], &schedule, &c, &mut state, |_, _| Ok(()));
        assert!(matches!(r, Err(PipelineError::NonFinite { step: 0, .. })), "{r:?}");
    }

    #[test]
    fn loss_decreases_on_two_molecules() {
        let schedule = Schedule::standard(50).unwrap();
        let data = samples();
        let mut store = ParamStore::new();
        let model = tiny_model(&mut store);
        let c = DiffTrainConfig {
            steps: 150,
            batch_size: 4,
            lr: 1e-2,
            eval_every: 50,
            ..DiffTrainConfig::default()
        };
        let mut state = TrainState::fresh(&c, &store);
        let mut improvements = 0;
        train_diffusion(&model, &mut store, &data, &[], &schedule, &c, &mut state, |_, _| {
            improvements += 1;
            Ok(())
        })
        .unwrap();
        let first = state.evals[0].val_loss;
        assert!(state.best_val < first, "{:?}", state.evals);
        assert!(improvements >= 2);
    }
}
