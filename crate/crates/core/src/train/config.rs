//! Line-based `key = value` training configuration.
//!
//! `#` starts a comment. A `preset` line, wherever it appears, selects the
//! defaults that the remaining keys override. Unknown keys are errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Supervised,
    Weak,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// 16x16 procedural sprites, sized for a single CPU core.
    Toy,
    /// Tinted MNIST digits at 28x28; the long-running recipe.
    Mnist,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Toy => "toy",
            Preset::Mnist => "mnist",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "toy" => Some(Preset::Toy),
            "mnist" => Some(Preset::Mnist),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub preset: Preset,
    /// Labelled dataset cache to train on instead of generating sequences.
    pub dataset: Option<PathBuf>,
    /// Held-out cache used by `eval`; generated from the preset when absent.
    pub test_dataset: Option<PathBuf>,
    /// IDX image file for the MNIST preset.
    pub mnist_images: Option<PathBuf>,
    pub image_size: usize,
    pub train_bases: usize,
    pub test_bases: usize,
    pub data_seed: u64,
    pub num_potentials: usize,
    pub steps: usize,
    pub latent_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub mode: Mode,
    pub hj_weight: f64,
    pub hj_initial_weight: f64,
    pub kl_step_weight: f64,
    pub ordinary_hj: bool,
    pub dt: f64,
    pub seed: u64,
    pub precision: Precision,
    pub channels: Vec<usize>,
    pub classifier_channels: Vec<usize>,
    pub potential_hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub potential_output_scale: f64,
    pub log_every: usize,
    /// Write an intermediate checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: usize,
    pub out_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Toy => Self {
                preset,
                dataset: None,
                test_dataset: None,
                mnist_images: None,
                image_size: 16,
                train_bases: 2000,
                test_bases: 100,
                data_seed: 0,
                num_potentials: 3,
                steps: 8,
                latent_dim: 8,
                learning_rate: 1e-3,
                batch_size: 32,
                iterations: 5000,
                mode: Mode::Supervised,
                hj_weight: 1.0,
                hj_initial_weight: 1.0,
                kl_step_weight: 1.0,
                ordinary_hj: false,
                dt: 1.0,
                seed: 0,
                precision: Precision::F32,
                channels: vec![16, 32, 32],
                classifier_channels: vec![8, 16, 16],
                potential_hidden: vec![32, 32],
                time_embed_dim: 8,
                potential_output_scale: 0.1,
                log_every: 1,
                checkpoint_every: 0,
                out_dir: None,
            },
            Preset::Mnist => Self {
                preset,
                image_size: 28,
                train_bases: 60000,
                test_bases: 1000,
                latent_dim: 32,
                learning_rate: 1e-4,
                batch_size: 128,
                iterations: 90000,
                channels: vec![32, 64, 64, 128],
                classifier_channels: vec![16, 32, 32, 64],
                potential_hidden: vec![128, 128],
                log_every: 10,
                checkpoint_every: 5000,
                ..Self::preset(Preset::Toy)
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("train_bases", self.train_bases),
            ("num_potentials", self.num_potentials),
            ("steps", self.steps),
            ("latent_dim", self.latent_dim),
            ("batch_size", self.batch_size),
            ("time_embed_dim", self.time_embed_dim),
            ("log_every", self.log_every),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(invalid(format!("{key} must be positive")));
            }
        }
        for (key, v) in [
            ("learning_rate", self.learning_rate),
            ("dt", self.dt),
            ("potential_output_scale", self.potential_output_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{key} must be positive, got {v}")));
            }
        }
        for (key, v) in [
            ("hj_weight", self.hj_weight),
            ("hj_initial_weight", self.hj_initial_weight),
            ("kl_step_weight", self.kl_step_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("{key} must be nonnegative, got {v}")));
            }
        }
        if self.time_embed_dim % 2 != 0 {
            return Err(invalid("time_embed_dim must be even".into()));
        }
        for (key, list) in [
            ("channels", &self.channels),
            ("classifier_channels", &self.classifier_channels),
            ("potential_hidden", &self.potential_hidden),
        ] {
            if list.is_empty() || list.contains(&0) {
                return Err(invalid(format!("{key} must be a nonempty list of positive widths")));
            }
        }
        if self.steps > 254 {
            return Err(invalid("steps must be at most 254".into()));
        }
        Ok(())
    }

    /// Parse the text form on top of the selected preset's defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut preset = Preset::Toy;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                message: format!("expected 'key = value', got '{line}'"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key == "preset" {
                preset = Preset::from_name(value).ok_or_else(|| Error::Config {
                    line: i + 1,
                    message: format!("unknown preset '{value}' (expected toy or mnist)"),
                })?;
            } else {
                entries.push((i + 1, key, value));
            }
        }
        let mut cfg = Self::preset(preset);
        for (line, key, value) in entries {
            cfg.set(key, value).map_err(|message| Error::Config { line, message })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Apply one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("bad value '{v}' for {key}"))
        }
        fn list(key: &str, v: &str) -> std::result::Result<Vec<usize>, String> {
            v.split(',').map(|s| num(key, s.trim())).collect()
        }
        fn path(v: &str) -> Option<PathBuf> {
            (!v.is_empty() && v != "none").then(|| PathBuf::from(v))
        }
        match key {
            "preset" => {
                self.preset = Preset::from_name(value).ok_or_else(|| format!("unknown preset '{value}'"))?;
            }
            "dataset" => self.dataset = path(value),
            "test_dataset" => self.test_dataset = path(value),
            "mnist_images" => self.mnist_images = path(value),
            "out_dir" => self.out_dir = path(value),
            "image_size" => self.image_size = num(key, value)?,
            "train_bases" => self.train_bases = num(key, value)?,
            "test_bases" => self.test_bases = num(key, value)?,
            "data_seed" => self.data_seed = num(key, value)?,
            "num_potentials" => self.num_potentials = num(key, value)?,
            "steps" => self.steps = num(key, value)?,
            "latent_dim" => self.latent_dim = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "hj_weight" => self.hj_weight = num(key, value)?,
            "hj_initial_weight" => self.hj_initial_weight = num(key, value)?,
            "kl_step_weight" => self.kl_step_weight = num(key, value)?,
            "ordinary_hj" => self.ordinary_hj = num(key, value)?,
            "dt" => self.dt = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "time_embed_dim" => self.time_embed_dim = num(key, value)?,
            "potential_output_scale" => self.potential_output_scale = num(key, value)?,
            "log_every" => self.log_every = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "channels" => self.channels = list(key, value)?,
            "classifier_channels" => self.classifier_channels = list(key, value)?,
            "potential_hidden" => self.potential_hidden = list(key, value)?,
            "mode" => {
                self.mode = match value {
                    "supervised" => Mode::Supervised,
                    "weak" => Mode::Weak,
                    _ => return Err(format!("mode must be supervised or weak, got '{value}'")),
                }
            }
            "precision" => {
                self.precision = match value {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(format!("precision must be f32 or f64, got '{value}'")),
                }
            }
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    /// Canonical text with every key; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map_or_else(|| "none".to_string(), |p| p.display().to_string())
        };
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("preset", self.preset.name().into());
        kv("dataset", path(&self.dataset));
        kv("test_dataset", path(&self.test_dataset));
        kv("mnist_images", path(&self.mnist_images));
        kv("image_size", self.image_size.to_string());
        kv("train_bases", self.train_bases.to_string());
        kv("test_bases", self.test_bases.to_string());
        kv("data_seed", self.data_seed.to_string());
        kv("num_potentials", self.num_potentials.to_string());
        kv("steps", self.steps.to_string());
        kv("latent_dim", self.latent_dim.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("iterations", self.iterations.to_string());
        kv(
            "mode",
            match self.mode {
                Mode::Supervised => "supervised",
                Mode::Weak => "weak",
            }
            .into(),
        );
        kv("hj_weight", self.hj_weight.to_string());
        kv("hj_initial_weight", self.hj_initial_weight.to_string());
        kv("kl_step_weight", self.kl_step_weight.to_string());
        kv("ordinary_hj", self.ordinary_hj.to_string());
        kv("dt", self.dt.to_string());
        kv("seed", self.seed.to_string());
        kv(
            "precision",
            match self.precision {
                Precision::F32 => "f32",
                Precision::F64 => "f64",
            }
            .into(),
        );
        kv("channels", join(&self.channels));
        kv("classifier_channels", join(&self.classifier_channels));
        kv("potential_hidden", join(&self.potential_hidden));
        kv("time_embed_dim", self.time_embed_dim.to_string());
        kv("potential_output_scale", self.potential_output_scale.to_string());
        kv("log_every", self.log_every.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("out_dir", path(&self.out_dir));
        out
    }

    /// SHA-256 of the canonical text.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_text().as_bytes()).into()
    }
}

fn invalid(message: String) -> Error {
    Error::Config { line: 0, message }
}
