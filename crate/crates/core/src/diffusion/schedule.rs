use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;

use super::DiffusionError;

pub const DEFAULT_STEPS: usize = 1000;

/// How the per-step noise levels are generated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    /// `beta_t = sigmoid(w1 (2t/T - 1)) (w2 - w3) + w3`.
    Sigmoid { w1: f64, w2: f64, w3: f64 },
    /// `alpha_bar_t = f(t) / f(0)`, `f(t) = cos(((t/T + s) / (1 + s)) pi/2)^2`.
    Cosine { s: f64 },
}

impl ScheduleKind {
    pub const SIGMOID_DEFAULT: ScheduleKind = ScheduleKind::Sigmoid {
        w1: 6.0,
        w2: 1e-7,
        w3: 0.01,
    };
    pub const COSINE_DEFAULT: ScheduleKind = ScheduleKind::Cosine { s: 0.01 };
}

/// Per-step tables indexed `0..=T`. Index 0 is the clean state: `beta_0 = 0`,
/// `alpha_bar_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTable {
    pub kind: ScheduleKind,
    pub steps: usize,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl NoiseTable {
    pub fn new(kind: ScheduleKind, steps: usize) -> Result<Self, DiffusionError> {
        if steps == 0 {
            return Err(DiffusionError::InvalidSchedule("T must be at least 1".into()));
        }
        let tf = steps as f64;
        let mut beta = vec![0.0; steps + 1];
        let mut alpha_bar = vec![1.0; steps + 1];
        match kind {
            ScheduleKind::Sigmoid { w1, w2, w3 } => {
                for t in 1..=steps {
                    let b = sigmoid(w1 * (2.0 * t as f64 / tf - 1.0)) * (w2 - w3) + w3;
                    if !(b > 0.0 && b < 1.0) {
                        return Err(DiffusionError::InvalidSchedule(format!("beta_{t} = {b} is outside (0, 1)")));
                    }
                    beta[t] = b;
                    alpha_bar[t] = alpha_bar[t - 1] * (1.0 - b);
                }
            }
            ScheduleKind::Cosine { s } => {
                if !(s > 0.0 && s.is_finite()) {
                    return Err(DiffusionError::InvalidSchedule(format!("cosine offset {s} must be positive")));
                }
                let f = |t: f64| (((t / tf + s) / (1.0 + s)) * FRAC_PI_2).cos().powi(2);
                let f0 = f(0.0);
                for t in 1..=steps {
                    // cos(pi/2) is not exactly zero in floating point.
                    alpha_bar[t] = if t == steps { 0.0 } else { f(t as f64) / f0 };
                    let b = 1.0 - alpha_bar[t] / alpha_bar[t - 1];
                    if !(b > 0.0 && b <= 1.0) {
                        return Err(DiffusionError::InvalidSchedule(format!("beta_{t} = {b} is outside (0, 1]")));
                    }
                    beta[t] = b;
                }
            }
        }
        let alpha = beta.iter().map(|b| 1.0 - b).collect();
        Ok(NoiseTable {
            kind,
            steps,
            beta,
            alpha,
            alpha_bar,
        })
    }

    fn check(&self, t: usize) -> Result<(), DiffusionError> {
        if t == 0 || t > self.steps {
            return Err(DiffusionError::StepOutOfRange { t, steps: self.steps });
        }
        Ok(())
    }

    /// Variance of the Gaussian posterior, `(1 - abar_{t-1}) / (1 - abar_t) beta_t`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        let denom = 1.0 - self.alpha_bar[t];
        if denom <= 0.0 {
            return 0.0;
        }
        (1.0 - self.alpha_bar[t - 1]) / denom * self.beta[t]
    }

    /// Coefficients `(c0, ct)` of the posterior mean `c0 x0 + ct x_t`.
    pub fn posterior_mean_coeffs(&self, t: usize) -> (f64, f64) {
        let denom = 1.0 - self.alpha_bar[t];
        let c0 = self.alpha_bar[t - 1].sqrt() * self.beta[t] / denom;
        let ct = self.alpha[t].sqrt() * (1.0 - self.alpha_bar[t - 1]) / denom;
        (c0, ct)
    }

    /// Clipped signal-to-noise weight `min(abar_t / (1 - abar_t), delta)`.
    pub fn snr_weight(&self, t: usize, delta: f64) -> f64 {
        snr_weight(self.alpha_bar[t], delta)
    }

    pub fn validate_step(&self, t: usize) -> Result<(), DiffusionError> {
        self.check(t)
    }
}

pub fn snr_weight(alpha_bar: f64, delta: f64) -> f64 {
    if alpha_bar >= 1.0 {
        return delta;
    }
    (alpha_bar / (1.0 - alpha_bar)).min(delta)
}

pub fn make_schedule(kind: ScheduleKind, steps: usize) -> Result<NoiseTable, DiffusionError> {
    NoiseTable::new(kind, steps)
}

/// Position and feature schedules sharing a step count.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub x: NoiseTable,
    pub v: NoiseTable,
}

impl Schedule {
    pub fn new(x: ScheduleKind, v: ScheduleKind, steps: usize) -> Result<Self, DiffusionError> {
        Ok(Schedule {
            x: NoiseTable::new(x, steps)?,
            v: NoiseTable::new(v, steps)?,
        })
    }

    /// Sigmoid positions, cosine features.
    pub fn standard(steps: usize) -> Result<Self, DiffusionError> {
        Self::new(ScheduleKind::SIGMOID_DEFAULT, ScheduleKind::COSINE_DEFAULT, steps)
    }

    pub fn steps(&self) -> usize {
        self.x.steps
    }

    /// Columns `t, beta_x, abar_x, beta_v, abar_v, posterior_var_x`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,beta_x,alpha_bar_x,beta_v,alpha_bar_v,posterior_var_x\n");
        for t in 0..=self.steps() {
            let pv = if t == 0 { 0.0 } else { self.x.posterior_variance(t) };
            let _ = writeln!(
                s,
                "{t},{:e},{:e},{:e},{:e},{:e}",
                self.x.beta[t], self.x.alpha_bar[t], self.v.beta[t], self.v.alpha_bar[t], pv
            );
        }
        s
    }
}
