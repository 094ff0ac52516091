//! Run configuration: a flat `key = value` file with `[section]` headers.

use std::fmt::Write as _;

use super::train::DiffTrainConfig;
use super::PipelineError;
use crate::chem::NUM_ATOM_CLASSES;
use crate::diffusion::{Schedule, ScheduleKind};
use crate::predictor::PredictorConfig;
use crate::sampler::SamplerConfig;
use crate::shape::{SeTrainConfig, ShapeConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub train_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub sigmoid_w1: f64,
    pub sigmoid_w2: f64,
    pub sigmoid_w3: f64,
    pub cosine_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorSection {
    pub scalar_hidden: usize,
    pub vector_hidden: usize,
    pub layers: usize,
    pub neighbors: usize,
    pub time_dim: usize,
    pub attn_dim: usize,
    pub heads: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSection {
    pub sampler: SamplerConfig,
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub delta_g: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataConfig,
    pub schedule: ScheduleConfig,
    pub shape: ShapeConfig,
    pub shape_seed: u64,
    pub train_shape: SeTrainConfig,
    pub predictor: PredictorSection,
    pub train_diff: DiffTrainConfig,
    pub generate: GenerateSection,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PredictorConfig::default();
        let (w1, w2, w3) = match ScheduleKind::SIGMOID_DEFAULT {
            ScheduleKind::Sigmoid { w1, w2, w3 } => (w1, w2, w3),
            ScheduleKind::Cosine { .. } => unreachable!(),
        };
        let s = match ScheduleKind::COSINE_DEFAULT {
            ScheduleKind::Cosine { s } => s,
            ScheduleKind::Sigmoid { .. } => unreachable!(),
        };
        RunConfig {
            data: DataConfig {
                train_fraction: 0.9,
                seed: 0,
            },
            schedule: ScheduleConfig {
                steps: crate::diffusion::DEFAULT_STEPS,
                sigmoid_w1: w1,
                sigmoid_w2: w2,
                sigmoid_w3: w3,
                cosine_s: s,
            },
            shape: ShapeConfig::default(),
            shape_seed: 0,
            train_shape: SeTrainConfig::default(),
            predictor: PredictorSection {
                scalar_hidden: p.scalar_hidden,
                vector_hidden: p.vector_hidden,
                layers: p.layers,
                neighbors: p.neighbors,
                time_dim: p.time_dim,
                attn_dim: p.attn_dim,
                heads: p.heads,
                seed: 0,
            },
            train_diff: DiffTrainConfig::default(),
            generate: GenerateSection {
                sampler: SamplerConfig::default(),
                n_samples: 50,
                seed: 0,
            },
            eval: EvalConfig { delta_g: 0.3 },
        }
    }
}

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

impl ConfigValue for usize {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.parse().map_err(|_| format!("expected a non-negative integer, got {s:?}"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for u64 {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.parse().map_err(|_| format!("expected a non-negative integer, got {s:?}"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.parse().map_err(|_| format!("expected a number, got {s:?}"))
    }
    fn render(&self) -> String {
        format!("{self:?}")
    }
}

macro_rules! config_fields {
    ($( $sec:literal . $key:literal => [$($path:tt)+] : $ty:ty ),* $(,)?) => {
        impl RunConfig {
            /// Every `(section, key)` the file format accepts.
            pub const KEYS: &'static [(&'static str, &'static str)] = &[$(($sec, $key)),*];

            fn set_field(&mut self, section: &str, key: &str, value: &str) -> Option<Result<(), String>> {
                match (section, key) {
                    $( ($sec, $key) => Some(<$ty as ConfigValue>::parse_value(value).map(|v| self.$($path)+ = v)), )*
                    _ => None,
                }
            }

            fn fields(&self) -> Vec<(&'static str, &'static str, String)> {
                vec![$( ($sec, $key, <$ty as ConfigValue>::render(&self.$($path)+)) ),*]
            }
        }
    };
}

config_fields! {
    "data"."train_fraction" => [data.train_fraction]: f64,
    "data"."seed" => [data.seed]: u64,
    "schedule"."steps" => [schedule.steps]: usize,
    "schedule"."sigmoid_w1" => [schedule.sigmoid_w1]: f64,
    "schedule"."sigmoid_w2" => [schedule.sigmoid_w2]: f64,
    "schedule"."sigmoid_w3" => [schedule.sigmoid_w3]: f64,
    "schedule"."cosine_s" => [schedule.cosine_s]: f64,
    "shape"."n_points" => [shape.n_points]: usize,
    "shape"."n_queries" => [shape.n_queries]: usize,
    "shape"."k" => [shape.k]: usize,
    "shape"."layers" => [shape.layers]: usize,
    "shape"."hidden" => [shape.hidden]: usize,
    "shape"."d_p" => [shape.d_p]: usize,
    "shape"."decoder_hidden" => [shape.decoder_hidden]: usize,
    "shape"."seed" => [shape_seed]: u64,
    "train_shape"."steps" => [train_shape.steps]: usize,
    "train_shape"."batch_size" => [train_shape.batch_size]: usize,
    "train_shape"."lr" => [train_shape.lr]: f64,
    "train_shape"."beta1" => [train_shape.beta1]: f64,
    "train_shape"."beta2" => [train_shape.beta2]: f64,
    "train_shape"."decay_factor" => [train_shape.decay_factor]: f64,
    "train_shape"."min_lr" => [train_shape.min_lr]: f64,
    "train_shape"."patience" => [train_shape.patience]: usize,
    "train_shape"."eval_every" => [train_shape.eval_every]: usize,
    "train_shape"."seed" => [train_shape.seed]: u64,
    "predictor"."scalar_hidden" => [predictor.scalar_hidden]: usize,
    "predictor"."vector_hidden" => [predictor.vector_hidden]: usize,
    "predictor"."layers" => [predictor.layers]: usize,
    "predictor"."neighbors" => [predictor.neighbors]: usize,
    "predictor"."time_dim" => [predictor.time_dim]: usize,
    "predictor"."attn_dim" => [predictor.attn_dim]: usize,
    "predictor"."heads" => [predictor.heads]: usize,
    "predictor"."seed" => [predictor.seed]: u64,
    "train_diff"."steps" => [train_diff.steps]: usize,
    "train_diff"."batch_size" => [train_diff.batch_size]: usize,
    "train_diff"."lr" => [train_diff.lr]: f64,
    "train_diff"."beta1" => [train_diff.beta1]: f64,
    "train_diff"."beta2" => [train_diff.beta2]: f64,
    "train_diff"."decay_factor" => [train_diff.decay_factor]: f64,
    "train_diff"."min_lr" => [train_diff.min_lr]: f64,
    "train_diff"."patience" => [train_diff.patience]: usize,
    "train_diff"."eval_every" => [train_diff.eval_every]: usize,
    "train_diff"."seed" => [train_diff.seed]: u64,
    "train_diff"."xi" => [train_diff.weights.xi]: f64,
    "train_diff"."zeta" => [train_diff.weights.zeta]: f64,
    "train_diff"."delta" => [train_diff.weights.delta]: f64,
    "generate"."gamma" => [generate.sampler.gamma]: f64,
    "generate"."stop_step" => [generate.sampler.stop_step]: usize,
    "generate"."sigma_min" => [generate.sampler.sigma_range.0]: f64,
    "generate"."sigma_max" => [generate.sampler.sigma_range.1]: f64,
    "generate"."guide_k" => [generate.sampler.guide_k]: usize,
    "generate"."points_per_atom" => [generate.sampler.points_per_atom]: usize,
    "generate"."phi" => [generate.sampler.phi]: f64,
    "generate"."epsilon_min" => [generate.sampler.epsilon_range.0]: f64,
    "generate"."epsilon_max" => [generate.sampler.epsilon_range.1]: f64,
    "generate"."pocket_k" => [generate.sampler.pocket_k]: usize,
    "generate"."n_samples" => [generate.n_samples]: usize,
    "generate"."seed" => [generate.seed]: u64,
    "eval"."delta_g" => [eval.delta_g]: f64,
}

fn config_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

impl RunConfig {
    /// Parses a config file over the defaults; unknown sections or keys are errors.
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !Self::KEYS.iter().any(|(s, _)| *s == name) {
                    return Err(config_err(format!("line {}: unknown section [{name}]", n + 1)));
                }
                section = name.to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(config_err(format!("line {}: expected `key = value`", n + 1)));
            };
            let key = key.trim();
            if section.is_empty() {
                return Err(config_err(format!("line {}: {key:?} appears before any [section]", n + 1)));
            }
            match cfg.set_field(&section, key, value.trim()) {
                None => return Err(config_err(format!("line {}: unknown key {section}.{key}", n + 1))),
                Some(Err(e)) => return Err(config_err(format!("line {}: {section}.{key}: {e}", n + 1))),
                Some(Ok(())) => {}
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (sec, key, value) in self.fields() {
            if sec != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{sec}]");
                current = sec;
            }
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    /// Checks every numeric field against its documented range.
    pub fn validate(&self) -> Result<(), PipelineError> {
        fn positive(name: &str, v: usize) -> Result<(), PipelineError> {
            if v == 0 {
                return Err(config_err(format!("{name} must be at least 1, got 0")));
            }
            Ok(())
        }
        fn open_unit(name: &str, v: f64) -> Result<(), PipelineError> {
            if !(v > 0.0 && v < 1.0) {
                return Err(config_err(format!("{name} must lie in (0, 1), got {v}")));
            }
            Ok(())
        }
        fn lr(name: &str, v: f64) -> Result<(), PipelineError> {
            if !(v > 0.0 && v <= 1.0) {
                return Err(config_err(format!("{name} must lie in (0, 1], got {v}")));
            }
            Ok(())
        }
        fn pos_f(name: &str, v: f64) -> Result<(), PipelineError> {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_err(format!("{name} must be a positive number, got {v}")));
            }
            Ok(())
        }

        let d = &self.data;
        if !(d.train_fraction > 0.0 && d.train_fraction <= 1.0) {
            return Err(config_err(format!("data.train_fraction must lie in (0, 1], got {}", d.train_fraction)));
        }
        let s = &self.schedule;
        if s.steps < 3 {
            return Err(config_err(format!("schedule.steps must be at least 3, got {}", s.steps)));
        }
        pos_f("schedule.sigmoid_w1", s.sigmoid_w1)?;
        open_unit("schedule.sigmoid_w2", s.sigmoid_w2)?;
        open_unit("schedule.sigmoid_w3", s.sigmoid_w3)?;
        pos_f("schedule.cosine_s", s.cosine_s)?;
        self.schedule_tables()?;

        let sh = &self.shape;
        for (name, v) in [
            ("shape.n_points", sh.n_points),
            ("shape.n_queries", sh.n_queries),
            ("shape.k", sh.k),
            ("shape.layers", sh.layers),
            ("shape.hidden", sh.hidden),
            ("shape.d_p", sh.d_p),
            ("shape.decoder_hidden", sh.decoder_hidden),
        ] {
            positive(name, v)?;
        }
        if sh.k >= sh.n_points {
            return Err(config_err(format!("shape.k must be below shape.n_points ({}), got {}", sh.n_points, sh.k)));
        }

        let ts = &self.train_shape;
        positive("train_shape.batch_size", ts.batch_size)?;
        positive("train_shape.eval_every", ts.eval_every)?;
        lr("train_shape.lr", ts.lr)?;
        open_unit("train_shape.beta1", ts.beta1)?;
        open_unit("train_shape.beta2", ts.beta2)?;
        open_unit("train_shape.decay_factor", ts.decay_factor)?;
        pos_f("train_shape.min_lr", ts.min_lr)?;

        let p = &self.predictor;
        for (name, v) in [
            ("predictor.scalar_hidden", p.scalar_hidden),
            ("predictor.vector_hidden", p.vector_hidden),
            ("predictor.neighbors", p.neighbors),
            ("predictor.attn_dim", p.attn_dim),
            ("predictor.heads", p.heads),
        ] {
            positive(name, v)?;
        }
        if p.layers < 2 {
            return Err(config_err(format!("predictor.layers must be at least 2, got {}", p.layers)));
        }
        if p.time_dim == 0 || p.time_dim % 2 != 0 {
            return Err(config_err(format!("predictor.time_dim must be a positive even number, got {}", p.time_dim)));
        }
        if p.attn_dim % p.heads != 0 {
            return Err(config_err(format!(
                "predictor.attn_dim ({}) must be divisible by predictor.heads ({})",
                p.attn_dim, p.heads
            )));
        }

        let td = &self.train_diff;
        positive("train_diff.batch_size", td.batch_size)?;
        positive("train_diff.eval_every", td.eval_every)?;
        lr("train_diff.lr", td.lr)?;
        open_unit("train_diff.beta1", td.beta1)?;
        open_unit("train_diff.beta2", td.beta2)?;
        open_unit("train_diff.decay_factor", td.decay_factor)?;
        pos_f("train_diff.min_lr", td.min_lr)?;
        pos_f("train_diff.xi", td.weights.xi)?;
        pos_f("train_diff.zeta", td.weights.zeta)?;
        pos_f("train_diff.delta", td.weights.delta)?;

        let g = &self.generate;
        let sc = &g.sampler;
        pos_f("generate.gamma", sc.gamma)?;
        if !(1 < sc.stop_step && sc.stop_step < s.steps) {
            return Err(config_err(format!(
                "generate.stop_step must lie strictly between 1 and schedule.steps ({}), got {}",
                s.steps, sc.stop_step
            )));
        }
        open_unit("generate.sigma_min", sc.sigma_range.0)?;
        open_unit("generate.sigma_max", sc.sigma_range.1)?;
        if sc.sigma_range.0 > sc.sigma_range.1 {
            return Err(config_err("generate.sigma_min must not exceed generate.sigma_max"));
        }
        positive("generate.guide_k", sc.guide_k)?;
        positive("generate.points_per_atom", sc.points_per_atom)?;
        positive("generate.pocket_k", sc.pocket_k)?;
        pos_f("generate.phi", sc.phi)?;
        if !(sc.epsilon_range.0 >= 0.0) {
            return Err(config_err(format!("generate.epsilon_min must be non-negative, got {}", sc.epsilon_range.0)));
        }
        if !(sc.epsilon_range.1 >= sc.epsilon_range.0) {
            return Err(config_err("generate.epsilon_max must not be below generate.epsilon_min"));
        }
        positive("generate.n_samples", g.n_samples)?;
        sc.validate(s.steps).map_err(|e| config_err(format!("generate: {e}")))?;

        if !(0.0..=1.0).contains(&self.eval.delta_g) {
            return Err(config_err(format!("eval.delta_g must lie in [0, 1], got {}", self.eval.delta_g)));
        }
        Ok(())
    }

    pub fn schedule_tables(&self) -> Result<Schedule, PipelineError> {
        let s = &self.schedule;
        Schedule::new(
            ScheduleKind::Sigmoid {
                w1: s.sigmoid_w1,
                w2: s.sigmoid_w2,
                w3: s.sigmoid_w3,
            },
            ScheduleKind::Cosine { s: s.cosine_s },
            s.steps,
        )
        .map_err(|e| config_err(format!("schedule: {e}")))
    }

    pub fn predictor_config(&self) -> PredictorConfig {
        let p = &self.predictor;
        PredictorConfig {
            scalar_hidden: p.scalar_hidden,
            vector_hidden: p.vector_hidden,
            layers: p.layers,
            neighbors: p.neighbors,
            num_classes: NUM_ATOM_CLASSES,
            time_dim: p.time_dim,
            attn_dim: p.attn_dim,
            heads: p.heads,
            d_p: self.shape.d_p,
        }
    }

    /// Small dimensions for the bundled toy corpus on a single CPU core.
    pub fn toy() -> Self {
        let mut c = RunConfig::default();
        c.data.train_fraction = 1.0;
        c.shape = ShapeConfig {
            n_points: 128,
            n_queries: 256,
            k: 10,
            layers: 2,
            hidden: 16,
            d_p: 16,
            decoder_hidden: 64,
        };
        c.train_shape.steps = 2000;
        c.train_shape.batch_size = 8;
        c.train_shape.eval_every = 250;
        c.predictor = PredictorSection {
            scalar_hidden: 32,
            vector_hidden: 8,
            layers: 4,
            neighbors: 8,
            time_dim: 16,
            attn_dim: 16,
            heads: 1,
            seed: 0,
        };
        // Increasing beta (w2 and w3 swapped) and lighter feature and bond weights
        // let the small model learn within 5000 steps.
        c.schedule.sigmoid_w2 = 0.01;
        c.schedule.sigmoid_w3 = 1e-7;
        c.train_diff.weights.xi = 10.0;
        c.train_diff.weights.zeta = 1.0;
        c.train_diff.steps = 5000;
        c.train_diff.batch_size = 32;
        c.train_diff.eval_every = 500;
        c.generate.n_samples = 20;
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        for c in [RunConfig::default(), RunConfig::toy()] {
            c.validate().unwrap();
            let text = c.to_text();
            assert_eq!(RunConfig::parse(&text).unwrap(), c);
        }
    }

    #[test]
    fn overrides_and_comments() {
        let c = RunConfig::parse("# toy\n[train_diff]\nlr = 0.01  # faster\n\n[generate]\ngamma=0.5\n").unwrap();
        assert_eq!(c.train_diff.lr, 0.01);
        assert_eq!(c.generate.sampler.gamma, 0.5);
        assert_eq!(c.schedule.steps, 1000);
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in ["[train_diff]\nlearning_rate = 1\n", "[nope]\nx = 1\n", "lr = 1\n", "[data]\nseed\n"] {
            let e = RunConfig::parse(text).unwrap_err();
            assert!(matches!(e, PipelineError::Config(_)), "{text}");
        }
    }

    #[test]
    fn every_key_is_parseable() {
        let c = RunConfig::default();
        let fields = c.fields();
        assert_eq!(fields.len(), RunConfig::KEYS.len());
        for (sec, key, value) in fields {
            let mut d = RunConfig::default();
            assert_eq!(d.set_field(sec, key, &value), Some(Ok(())), "{sec}.{key}");
        }
    }

    #[test]
    fn out_of_range_values_name_their_field() {
        let cases = [
            ("data", "train_fraction", "0"),
            ("data", "train_fraction", "1.5"),
            ("schedule", "steps", "2"),
            ("schedule", "sigmoid_w2", "0"),
            ("schedule", "sigmoid_w3", "1"),
            ("schedule", "cosine_s", "-1"),
            ("shape", "n_points", "0"),
            ("shape", "k", "9999"),
            ("shape", "d_p", "0"),
            ("train_shape", "lr", "0"),
            ("train_shape", "beta1", "1"),
            ("train_shape", "batch_size", "0"),
            ("train_shape", "decay_factor", "1.2"),
            ("predictor", "layers", "1"),
            ("predictor", "time_dim", "7"),
            ("predictor", "heads", "3"),
            ("train_diff", "lr", "2"),
            ("train_diff", "min_lr", "0"),
            ("train_diff", "xi", "-1"),
            ("train_diff", "delta", "0"),
            ("train_diff", "eval_every", "0"),
            ("generate", "gamma", "0"),
            ("generate", "stop_step", "1000"),
            ("generate", "sigma_min", "0"),
            ("generate", "sigma_max", "1"),
            ("generate", "phi", "0"),
            ("generate", "epsilon_min", "-0.1"),
            ("generate", "n_samples", "0"),
            ("eval", "delta_g", "1.5"),
        ];
        for (sec, key, value) in cases {
            let text = format!("[{sec}]\n{key} = {value}\n");
            match RunConfig::parse(&text) {
                Err(PipelineError::Config(msg)) => {
                    assert!(msg.contains(&format!("{sec}.{key}")), "{sec}.{key}: {msg}");
                }
                other => panic!("{sec}.{key} = {value} accepted: {other:?}"),
            }
        }
    }

    #[test]
    fn bad_number_reports_line() {
        let e = RunConfig::parse("[data]\n\nseed = -3\n").unwrap_err().to_string();
        assert!(e.contains("line 3") && e.contains("data.seed"), "{e}");
    }
}
