//! Line-oriented `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key is optional on input;
//! missing keys take the published defaults for the configured `L`, so `L`
//! is resolved before anything else. Serialization writes every key in a
//! fixed order and parsing that text reproduces it byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use crate::decoder::DecoderConfig;
use crate::error::{Error, Result};
use crate::evaluator::linear_grid;
use crate::formats;
use crate::noise::NoiseModel;
use crate::reoptimizer::ReoptConfig;
use crate::syndrome_field::ApproxConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub l: usize,
    pub noise: String,
    pub p: f64,
    pub eta: f64,
    pub seed: u64,
    pub workers: usize,
    pub deterministic: bool,

    pub data_n: usize,
    pub data_test_n: usize,

    pub approx_hidden_scale: usize,
    pub approx_n_train: usize,
    pub approx_n_test: usize,
    pub approx_batch: usize,
    pub approx_epochs: usize,
    pub approx_lr: f64,
    pub approx_weight_decay: f64,
    pub approx_cosine_decay: bool,

    pub decoder_hidden_layers: usize,
    pub decoder_hidden_scale: usize,
    pub decoder_batch: usize,
    pub decoder_epochs: usize,
    pub decoder_lr: f64,
    pub decoder_val_fraction: f64,

    pub reopt_batch: usize,
    pub reopt_epochs: usize,
    pub reopt_lr: f64,

    pub eval_trials: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub p_step: f64,

    pub study_seeds: usize,
    pub scaling_multipliers: Vec<usize>,
    pub bias_etas: Vec<f64>,

    pub data: String,
    pub decoder: String,
    pub f_model: String,
    pub out: String,
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

macro_rules! keys {
    ($($key:literal => $field:ident : $kind:ident),* $(,)?) => {
        const KEYS: &[&str] = &[$($key),*];

        impl RunConfig {
            fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => self.$field = keys!(@parse $kind, $key, value)?,)*
                    _ => return Err(Error::Config(format!("unknown key {key:?}"))),
                }
                Ok(())
            }

            fn get(&self, key: &str) -> String {
                match key {
                    $($key => keys!(@show $kind, self.$field),)*
                    _ => unreachable!("key list and match arms agree"),
                }
            }
        }
    };
    (@parse num, $key:literal, $v:ident) => { parse_num($key, $v) };
    (@parse text, $key:literal, $v:ident) => { Ok::<String, Error>($v.to_string()) };
    (@parse flag, $key:literal, $v:ident) => { parse_bool($key, $v) };
    (@parse list, $key:literal, $v:ident) => { parse_list($key, $v) };
    (@show num, $e:expr) => { $e.to_string() };
    (@show text, $e:expr) => { $e.clone() };
    (@show flag, $e:expr) => { $e.to_string() };
    (@show list, $e:expr) => { join(&$e) };
}

keys! {
    "L" => l: num,
    "noise" => noise: text,
    "p" => p: num,
    "eta" => eta: num,
    "seed" => seed: num,
    "workers" => workers: num,
    "deterministic" => deterministic: flag,
    "data_n" => data_n: num,
    "data_test_n" => data_test_n: num,
    "approx_hidden_scale" => approx_hidden_scale: num,
    "approx_n_train" => approx_n_train: num,
    "approx_n_test" => approx_n_test: num,
    "approx_batch" => approx_batch: num,
    "approx_epochs" => approx_epochs: num,
    "approx_lr" => approx_lr: num,
    "approx_weight_decay" => approx_weight_decay: num,
    "approx_cosine_decay" => approx_cosine_decay: flag,
    "decoder_hidden_layers" => decoder_hidden_layers: num,
    "decoder_hidden_scale" => decoder_hidden_scale: num,
    "decoder_batch" => decoder_batch: num,
    "decoder_epochs" => decoder_epochs: num,
    "decoder_lr" => decoder_lr: num,
    "decoder_val_fraction" => decoder_val_fraction: num,
    "reopt_batch" => reopt_batch: num,
    "reopt_epochs" => reopt_epochs: num,
    "reopt_lr" => reopt_lr: num,
    "eval_trials" => eval_trials: num,
    "p_min" => p_min: num,
    "p_max" => p_max: num,
    "p_step" => p_step: num,
    "study_seeds" => study_seeds: num,
    "scaling_multipliers" => scaling_multipliers: list,
    "bias_etas" => bias_etas: list,
    "data" => data: text,
    "decoder" => decoder: text,
    "f_model" => f_model: text,
    "out" => out: text,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_distance(5)
    }
}

impl RunConfig {
    /// Published settings for distance `l`.
    pub fn for_distance(l: usize) -> Self {
        let large = l >= 7;
        let a = ApproxConfig::full_scale(l);
        let d = DecoderConfig::full_scale();
        let r = ReoptConfig::full_scale(l);
        Self {
            l,
            noise: "depolarizing".into(),
            p: 0.05,
            eta: 1.0,
            seed: 0,
            workers: 0,
            deterministic: false,
            data_n: if large { 40_000_000 } else { 2_000_000 },
            data_test_n: if large { 200_000 } else { 100_000 },
            approx_hidden_scale: a.hidden_scale,
            approx_n_train: a.n_train,
            approx_n_test: a.n_test,
            approx_batch: a.batch_size,
            approx_epochs: a.epochs,
            approx_lr: a.lr,
            approx_weight_decay: a.weight_decay,
            approx_cosine_decay: a.cosine_decay,
            decoder_hidden_layers: d.hidden_layers,
            decoder_hidden_scale: d.hidden_scale,
            decoder_batch: d.batch_size,
            decoder_epochs: d.epochs,
            decoder_lr: d.lr,
            decoder_val_fraction: d.val_fraction,
            reopt_batch: r.batch_size,
            reopt_epochs: r.epochs,
            reopt_lr: r.lr,
            eval_trials: crate::evaluator::DEFAULT_TRIALS,
            p_min: 0.001,
            p_max: 0.05,
            p_step: 0.001,
            study_seeds: 10,
            scaling_multipliers: vec![1, 2, 3, 4, 5],
            bias_etas: vec![0.5, 1.0, 3.0, 5.0],
            data: String::new(),
            decoder: String::new(),
            f_model: String::new(),
            out: String::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: Vec<(&str, &str)> = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(Error::Config(format!("line {}: unknown key {k:?}", no + 1)));
            }
            if pairs.iter().any(|(seen, _)| *seen == k) {
                return Err(Error::Config(format!("line {}: duplicate key {k:?}", no + 1)));
            }
            pairs.push((k, v));
        }
        let l = match pairs.iter().find(|(k, _)| *k == "L") {
            Some((_, v)) => parse_num("L", v)?,
            None => 5,
        };
        let mut cfg = Self::for_distance(l);
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Applies a `key=value` override, as given on the command line.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        self.set(key, value)?;
        self.validate()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            writeln!(out, "{key} = {}", self.get(key)).expect("string write");
        }
        out
    }

    /// Hash of the canonical text; stamped into every artifact.
    pub fn hash(&self) -> u64 {
        formats::config_hash(&self.to_text())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.l < 2 {
            return bad(format!("L must be >= 2, got {}", self.l));
        }
        self.noise_model()?;
        for (k, v) in [
            ("approx_lr", self.approx_lr),
            ("decoder_lr", self.decoder_lr),
            ("reopt_lr", self.reopt_lr),
            ("approx_weight_decay", self.approx_weight_decay),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{k} must be finite and >= 0"));
            }
        }
        for (k, v) in [
            ("approx_batch", self.approx_batch),
            ("decoder_batch", self.decoder_batch),
            ("reopt_batch", self.reopt_batch),
            ("approx_hidden_scale", self.approx_hidden_scale),
            ("decoder_hidden_scale", self.decoder_hidden_scale),
            ("eval_trials", self.eval_trials),
            ("study_seeds", self.study_seeds),
        ] {
            if v == 0 {
                return bad(format!("{k} must be >= 1"));
            }
        }
        if !(0.0..1.0).contains(&self.decoder_val_fraction) {
            return bad("decoder_val_fraction must lie in [0, 1)".into());
        }
        self.grid()?;
        if self.scaling_multipliers.is_empty() || self.scaling_multipliers.contains(&0) {
            return bad("scaling_multipliers must be positive".into());
        }
        for &eta in &self.bias_etas {
            NoiseModel::biased(self.p, eta).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        let model = match self.noise.as_str() {
            "depolarizing" => NoiseModel::depolarizing(self.p),
            "biased" => NoiseModel::biased(self.p, self.eta),
            other => return Err(Error::Config(format!("noise must be depolarizing or biased, got {other:?}"))),
        };
        model.map_err(|e| Error::Config(e.to_string()))
    }

    pub fn grid(&self) -> Result<Vec<f64>> {
        if !(self.p_min >= 0.0 && self.p_max <= 1.0) {
            return Err(Error::Config("p grid must lie in [0, 1]".into()));
        }
        linear_grid(self.p_min, self.p_max, self.p_step).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn approx_config(&self) -> ApproxConfig {
        ApproxConfig {
            hidden_scale: self.approx_hidden_scale,
            n_train: self.approx_n_train,
            n_test: self.approx_n_test,
            batch_size: self.approx_batch,
            epochs: self.approx_epochs,
            lr: self.approx_lr,
            weight_decay: self.approx_weight_decay,
            cosine_decay: self.approx_cosine_decay,
        }
    }

    pub fn decoder_config(&self) -> DecoderConfig {
        DecoderConfig {
            hidden_layers: self.decoder_hidden_layers,
            hidden_scale: self.decoder_hidden_scale,
            batch_size: self.decoder_batch,
            epochs: self.decoder_epochs,
            lr: self.decoder_lr,
            val_fraction: self.decoder_val_fraction,
        }
    }

    pub fn reopt_config(&self) -> ReoptConfig {
        ReoptConfig {
            batch_size: self.reopt_batch,
            epochs: self.reopt_epochs,
            lr: self.reopt_lr,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_distance() {
        let c5 = RunConfig::default();
        assert_eq!((c5.approx_hidden_scale, c5.approx_batch, c5.reopt_batch), (1000, 512, 200));
        assert_eq!(c5.decoder_hidden_layers, 18);
        assert_eq!(c5.approx_lr, 1e-5);
        assert_eq!(c5.reopt_lr, 3e-8);
        let c7 = RunConfig::parse("L = 7\n").unwrap();
        assert_eq!((c7.approx_hidden_scale, c7.approx_batch, c7.reopt_batch), (750, 2048, 400));
        assert_eq!(c7.approx_n_train, 10_000_000);
    }

    #[test]
    fn canonical_text_round_trips() {
        let text = RunConfig::parse("# desk run\nL=3\nnoise = biased\neta = 3\nreopt_lr = 1e-7\nbias_etas = 0.5, 5\n")
            .unwrap()
            .to_text();
        let again = RunConfig::parse(&text).unwrap();
        assert_eq!(again.to_text(), text);
        assert_eq!(again.reopt_lr, 1e-7);
        assert_eq!(again.bias_etas, vec![0.5, 5.0]);
        assert_eq!(text.lines().count(), KEYS.len());
        assert_eq!(RunConfig::default().to_text(), RunConfig::parse(&RunConfig::default().to_text()).unwrap().to_text());
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "bogus = 1\n",
            "L = 1\n",
            "p = 1.5\n",
            "noise = thermal\n",
            "L = 3\nL = 4\n",
            "deterministic = yes\n",
            "decoder_batch = 0\n",
            "just a line\n",
            "scaling_multipliers = 1,0\n",
        ] {
            assert!(matches!(RunConfig::parse(text), Err(Error::Config(_))), "{text:?}");
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.apply("seed", "1").unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), RunConfig::parse(&a.to_text()).unwrap().hash());
        assert!(b.apply("nope", "1").is_err());
    }
}
