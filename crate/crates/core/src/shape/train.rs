//! Pre-training of the shape encoder/decoder on signed distances.

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::ShapeModel;
use super::query::{sample_query_points, QuerySet};
use super::surface::{build_surface_point_cloud, PointCloud};
use super::ShapeError;
use crate::chem::Molecule;
use crate::nn::{batch_gradients, batch_losses, Adam, AdamConfig, Mat, ParamStore, PlateauScheduler};

/// One training example: a centred surface cloud and its labelled queries.
#[derive(Debug, Clone, PartialEq)]
pub struct SeSample {
    pub cloud: PointCloud,
    pub queries: QuerySet,
}

pub fn make_sample(m: &Molecule, n_points: usize, n_queries: usize, rng: &mut impl Rng) -> Result<SeSample, ShapeError> {
    let (cloud, surface) = build_surface_point_cloud(m, n_points, rng)?;
    let queries = sample_query_points(&surface, n_queries, rng);
    Ok(SeSample { cloud, queries })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub decay_factor: f64,
    pub min_lr: f64,
    /// Evaluations without improvement before the learning rate decays.
    pub patience: usize,
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for SeTrainConfig {
    fn default() -> Self {
        SeTrainConfig {
            steps: 20_000,
            batch_size: 16,
            lr: 1e-3,
            beta1: 0.95,
            beta2: 0.999,
            decay_factor: 0.6,
            min_lr: 1e-6,
            patience: 5,
            eval_every: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    /// Mean per-molecule L^s on the validation set.
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeTrainReport {
    /// Mean per-molecule L^s of each training batch.
    pub train_curve: Vec<f64>,
    pub evals: Vec<EvalRecord>,
    pub best_step: usize,
    pub best_val: f64,
}

fn mean_loss(model: &ShapeModel, store: &ParamStore, set: &[SeSample]) -> Result<f64, ShapeError> {
    let ls = batch_losses(store, set, |g, s| model.loss_graph(g, &s.cloud, &s.queries))?;
    Ok(ls.iter().sum::<f64>() / ls.len() as f64)
}

fn snapshot(store: &ParamStore) -> Vec<Mat> {
    store.iter().map(|(_, _, v)| v.clone()).collect()
}

fn restore(store: &mut ParamStore, values: Vec<Mat>) {
    let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
    for (id, v) in ids.into_iter().zip(values) {
        *store.value_mut(id) = v;
    }
}

/// Trains `model` in place and leaves `store` at the best validation checkpoint.
///
/// Validation runs at step 0, every `eval_every` steps, and after the last step.
/// An empty `val` set falls back to the training set.
pub fn pretrain_se(
    model: &ShapeModel,
    store: &mut ParamStore,
    train: &[SeSample],
    val: &[SeSample],
    cfg: &SeTrainConfig,
) -> Result<SeTrainReport, ShapeError> {
    if train.is_empty() {
        return Err(ShapeError::EmptyCorpus);
    }
    let val = if val.is_empty() { train } else { val };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            ..AdamConfig::default()
        },
        store,
    );
    let mut sched = PlateauScheduler::new(cfg.decay_factor, cfg.patience, cfg.min_lr);
    let mut report = SeTrainReport {
        train_curve: Vec::with_capacity(cfg.steps),
        evals: Vec::new(),
        best_step: 0,
        best_val: f64::INFINITY,
    };
    let mut best = snapshot(store);
    let eval_every = cfg.eval_every.max(1);
    for step in 0..=cfg.steps {
        if step % eval_every == 0 || step == cfg.steps {
            let v = mean_loss(model, store, val)?;
            if !v.is_finite() {
                return Err(ShapeError::NonFinite {
                    step,
                    detail: format!("validation loss {v}"),
                });
            }
            info!("se step {step}: val L^s {v:.4} lr {:.2e}", opt.config.lr);
            report.evals.push(EvalRecord {
                step,
                val_loss: v,
                lr: opt.config.lr,
            });
            if v < report.best_val {
                report.best_val = v;
                report.best_step = step;
                best = snapshot(store);
            }
            if step > 0 {
                opt.config.lr = sched.observe(v, opt.config.lr);
            }
        }
        if step == cfg.steps {
            break;
        }
        let batch: Vec<&SeSample> = (0..cfg.batch_size.max(1))
            .map(|_| &train[rng.random_range(0..train.len())])
            .collect();
        let (losses, grads) = batch_gradients(store, &batch, |g, s| model.loss_graph(g, &s.cloud, &s.queries))?;
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        if !mean.is_finite() || !grads.is_finite() {
            let bad = losses.iter().position(|l| !l.is_finite());
            return Err(ShapeError::NonFinite {
                step,
                detail: format!("batch loss {mean}, first bad item {bad:?}, grad norm {}", grads.norm()),
            });
        }
        debug!("se step {step}: batch L^s {mean:.4}");
        report.train_curve.push(mean);
        opt.update(store, &grads);
    }
    restore(store, best);
    Ok(report)
}
