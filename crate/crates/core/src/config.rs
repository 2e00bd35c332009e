//! Run configuration: `key = value` lines with `#` comments.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::SquareConfig;
use crate::error::{Error, Result};
use crate::nn::{ModelConfig, SppSpec};
use crate::optim::{Alpha, PbgdConfig, UpdateBatch};
use crate::train::{PhaseSchedule, TrainOptions};

pub const SEED_ENV: &str = "PBGDNET_SEED";
pub const DEFAULT_SEED: u64 = 42;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub pbgd: PbgdConfig,
    pub alternations: usize,
    pub epochs_per_phase: usize,
    pub convergence_delta: Option<f64>,
    /// Epoch count for plain training (residual layer off).
    pub epochs: usize,
    pub spp_scales: Vec<usize>,
    pub residual_layer: bool,
    /// Dataset manifest; a Square dataset is synthesised when absent.
    pub manifest: Option<PathBuf>,
    pub synth_count: usize,
    pub synth_seed: u64,
    pub split: Vec<f64>,
    /// Resize every image to `(height, width)` before training.
    pub resize: Option<(usize, usize)>,
    pub skip_undersized: bool,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pbgd: PbgdConfig::default(),
            alternations: 3,
            epochs_per_phase: 2,
            convergence_delta: None,
            epochs: 10,
            spp_scales: vec![1, 2, 4],
            residual_layer: false,
            manifest: None,
            synth_count: 2000,
            synth_seed: DEFAULT_SEED,
            split: vec![0.8, 0.2],
            resize: None,
            skip_undersized: false,
            seed: DEFAULT_SEED,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

fn parse_num<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected on/off, got `{v}`"))),
    }
}

fn parse_list<V: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<V>> {
    v.split(',').map(|x| parse_num(key, x.trim())).collect()
}

impl RunConfig {
    /// Parses config text. `env_seed` is used when the text has no `seed`.
    pub fn parse(text: &str, env_seed: Option<&str>) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
            cfg.set(key, value).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", lineno + 1)),
                other => other,
            })?;
        }
        if !seen.contains("seed") {
            if let Some(s) = env_seed {
                cfg.seed = parse_num(SEED_ENV, s.trim())?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, std::env::var(SEED_ENV).ok().as_deref())
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "eta" => self.pbgd.eta = parse_num(key, v)?,
            "alpha" => self.pbgd.alpha = v.parse::<Alpha>()?,
            "n_i" => self.pbgd.n_i = parse_num(key, v)?,
            "n_u" => self.pbgd.n_u = v.parse::<UpdateBatch>()?,
            "lr_patience" => self.pbgd.lr_patience = parse_num(key, v)?,
            "lr_factor" => self.pbgd.lr_factor = parse_num(key, v)?,
            "alternations" => self.alternations = parse_num(key, v)?,
            "epochs_per_phase" => self.epochs_per_phase = parse_num(key, v)?,
            "convergence_delta" => self.convergence_delta = if v == "none" { None } else { Some(parse_num(key, v)?) },
            "epochs" => self.epochs = parse_num(key, v)?,
            "backbone" => {
                if v != "tinynet" {
                    return Err(Error::Config(format!("unsupported backbone `{v}` (only tinynet)")));
                }
            }
            "spp_scales" => self.spp_scales = parse_list(key, v)?,
            "residual_layer" => self.residual_layer = parse_bool(key, v)?,
            "manifest" => self.manifest = if v == "none" { None } else { Some(PathBuf::from(v)) },
            "synth_count" => self.synth_count = parse_num(key, v)?,
            "synth_seed" => self.synth_seed = parse_num(key, v)?,
            "split" => self.split = parse_list(key, v)?,
            "resize" => {
                self.resize = if v == "none" {
                    None
                } else {
                    let (h, w) = v
                        .split_once('x')
                        .ok_or_else(|| Error::Config(format!("`resize`: expected HxW or none, got `{v}`")))?;
                    Some((parse_num(key, h.trim())?, parse_num(key, w.trim())?))
                }
            }
            "skip_undersized" => self.skip_undersized = parse_bool(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.pbgd.validate()?;
        self.schedule().validate()?;
        SppSpec::new(self.spp_scales.clone()).map_err(|e| Error::Config(e.to_string()))?;
        if (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.split.iter().any(|&f| f <= 0.0) {
            return Err(Error::Config(format!(
                "split fractions must be positive and sum to 1, got {:?}",
                self.split
            )));
        }
        if self.split.len() < 2 || self.split.len() > 3 {
            return Err(Error::Config(
                "split needs train and validation fractions (and optionally test)".into(),
            ));
        }
        if matches!(self.resize, Some((0, _)) | Some((_, 0))) {
            return Err(Error::Config("resize target must be positive".into()));
        }
        if self.manifest.is_none() && (self.synth_count == 0 || !self.synth_count.is_multiple_of(2)) {
            return Err(Error::Config("synth_count must be positive and even".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> PhaseSchedule {
        PhaseSchedule {
            alternations: self.alternations,
            epochs_per_phase: self.epochs_per_phase,
            convergence_delta: self.convergence_delta,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            residual: self.residual_layer,
            spp: SppSpec {
                scales: self.spp_scales.clone(),
            },
            seed: self.seed,
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            pbgd: self.pbgd.clone(),
            avg_pixels: None,
            skip_undersized: self.skip_undersized,
            shuffle: true,
        }
    }

    pub fn square_config(&self) -> SquareConfig {
        SquareConfig {
            count: self.synth_count,
            seed: self.synth_seed,
            ..SquareConfig::default()
        }
    }

    /// Every key with its resolved value; parses back to `self`.
    pub fn to_text(&self) -> String {
        let join = |v: &[String]| v.join(",");
        let mut s = String::new();
        let p = &self.pbgd;
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("eta", p.eta.to_string());
        kv("alpha", p.alpha.to_string());
        kv("n_i", p.n_i.to_string());
        kv("n_u", p.n_u.to_string());
        kv("lr_patience", p.lr_patience.to_string());
        kv("lr_factor", p.lr_factor.to_string());
        kv("alternations", self.alternations.to_string());
        kv("epochs_per_phase", self.epochs_per_phase.to_string());
        kv(
            "convergence_delta",
            self.convergence_delta.map_or("none".into(), |d| d.to_string()),
        );
        kv("epochs", self.epochs.to_string());
        kv("backbone", "tinynet".into());
        kv(
            "spp_scales",
            join(&self.spp_scales.iter().map(ToString::to_string).collect::<Vec<_>>()),
        );
        kv("residual_layer", if self.residual_layer { "on" } else { "off" }.into());
        kv(
            "manifest",
            self.manifest
                .as_ref()
                .map_or("none".into(), |m| m.display().to_string()),
        );
        kv("synth_count", self.synth_count.to_string());
        kv("synth_seed", self.synth_seed.to_string());
        kv(
            "split",
            join(&self.split.iter().map(ToString::to_string).collect::<Vec<_>>()),
        );
        kv("resize", self.resize.map_or("none".into(), |(h, w)| format!("{h}x{w}")));
        kv("skip_undersized", self.skip_undersized.to_string());
        kv("seed", self.seed.to_string());
        kv("output_dir", self.output_dir.display().to_string());
        s
    }
}
