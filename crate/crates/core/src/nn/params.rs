use std::collections::BTreeMap;

use rand::Rng;

use super::tensor::Mat;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable matrices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    by_name: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        self.by_name.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn add_uniform(&mut self, name: impl Into<String>, rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let m = Mat::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound));
        self.add(name, m)
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub(crate) fn value_at(&self, idx: usize) -> &Mat {
        &self.values[idx]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(Mat::len).sum()
    }

    /// Replaces the value of `name`, checking its shape.
    pub fn set(&mut self, name: &str, value: Mat) -> Result<(), NnError> {
        let id = self.id(name).ok_or_else(|| NnError::UnknownParam(name.to_string()))?;
        let cur = &mut self.values[id.0];
        if cur.shape() != value.shape() {
            return Err(NnError::ShapeMismatch {
                op: format!("set {name}"),
                expected: cur.shape(),
                got: value.shape(),
            });
        }
        *cur = value;
        Ok(())
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            mats: self.values.iter().map(|m| Mat::zeros(m.rows, m.cols)).collect(),
        }
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub mats: Vec<Mat>,
}

impl Grads {
    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.mats.iter_mut().zip(&other.mats) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for m in &mut self.mats {
            m.scale_in_place(s);
        }
    }

    pub fn norm(&self) -> f64 {
        self.mats.iter().map(Mat::sq_norm).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.mats.iter().all(Mat::is_finite)
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip(&mut self, max_norm: f64) -> f64 {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
        n
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let z = store.zero_grads().mats;
        Adam {
            config,
            step: 0,
            m: z.clone(),
            v: z,
        }
    }

    pub fn update(&mut self, store: &mut ParamStore, grads: &Grads) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (k, g) in grads.mats.iter().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let p = &mut store.values[k];
            for i in 0..g.data.len() {
                let gi = g.data[i];
                m.data[i] = c.beta1 * m.data[i] + (1.0 - c.beta1) * gi;
                v.data[i] = c.beta2 * v.data[i] + (1.0 - c.beta2) * gi * gi;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                p.data[i] -= c.lr * mh / (vh.sqrt() + c.eps);
            }
        }
    }
}

/// Multiplies the learning rate by `factor` after `patience` evaluations
/// without improvement, never going below `min_lr`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    pub best: f64,
    pub bad_evals: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize, min_lr: f64) -> Self {
        PlateauScheduler {
            factor,
            patience,
            min_lr,
            best: f64::INFINITY,
            bad_evals: 0,
        }
    }

    /// Records an evaluation loss and returns the learning rate to use next.
    pub fn observe(&mut self, loss: f64, lr: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.bad_evals = 0;
            return lr;
        }
        self.bad_evals += 1;
        if self.bad_evals > self.patience {
            self.bad_evals = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr
    }
}
