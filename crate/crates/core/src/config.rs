//! Flat key=value run configuration.
//!
//! A config file holds one `key = value` pair per line (`#` comments).
//! Unknown keys are rejected by name. Every CLI run writes back its resolved
//! settings as a sorted snapshot for reproducibility.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tfunet::ArchConfig;

/// Sparsity penalty weight: `auto` derives the reference rule
/// μ = 10^(-9.5) · N from the training-set size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MuSetting {
    Auto,
    Fixed(f64),
}

impl MuSetting {
    pub fn resolve(self, n_train: usize) -> f64 {
        match self {
            MuSetting::Auto => 10f64.powf(-9.5) * n_train as f64,
            MuSetting::Fixed(v) => v,
        }
    }
}

/// Everything a training run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub arch: ArchConfig,
    pub image_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub mu: MuSetting,
    /// Per-level penalty weights, finest level first. `None` derives
    /// w_l = 2^(-l).
    pub level_weights: Option<Vec<f64>>,
    pub seed: u64,
    /// Checkpoint every N epochs (0 = final checkpoint only).
    pub checkpoint_every: usize,
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
}

impl TrainConfig {
    /// The reference configuration: 256x256 images, 60 epochs, Adam with
    /// lr 1e-3 / β₁ 0.9 / β₂ 0.999 / ε 1e-8, μ = 10^(-9.5)·N and
    /// w_l = 2^(-l).
    pub fn reference(bypass: bool) -> TrainConfig {
        TrainConfig {
            arch: ArchConfig::reference(bypass),
            image_size: 256,
            epochs: 60,
            batch_size: 8,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            mu: MuSetting::Auto,
            level_weights: None,
            seed: 0,
            checkpoint_every: 0,
            train_dir: None,
            val_dir: None,
        }
    }

    /// Per-level penalty weights, finest first.
    pub fn effective_level_weights(&self) -> Result<Vec<f64>> {
        let w = match &self.level_weights {
            Some(w) => {
                if w.len() != self.arch.levels {
                    return Err(Error::ConfigValue {
                        key: "level_weights".into(),
                        detail: format!("{} weights for {} levels", w.len(), self.arch.levels),
                    });
                }
                w.clone()
            }
            None => (0..self.arch.levels).map(|l| 0.5f64.powi(l as i32 + 1)).collect(),
        };
        if w.iter().any(|&v| v <= 0.0) {
            return Err(Error::ConfigValue {
                key: "level_weights".into(),
                detail: "all level weights must be positive".into(),
            });
        }
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.epochs == 0 {
            return Err(Error::ConfigValue { key: "epochs".into(), detail: "must be >= 1".into() });
        }
        if self.batch_size == 0 {
            return Err(Error::ConfigValue { key: "batch_size".into(), detail: "must be >= 1".into() });
        }
        if let MuSetting::Fixed(v) = self.mu {
            if v < 0.0 {
                return Err(Error::ConfigValue { key: "mu".into(), detail: "must be >= 0".into() });
            }
        }
        self.effective_level_weights()?;
        self.arch.check_input_size(self.image_size, self.image_size).map_err(|_| Error::ConfigValue {
            key: "image_size".into(),
            detail: format!("{} not divisible by 2^levels", self.image_size),
        })?;
        Ok(())
    }

    /// Apply `key = value` overrides, rejecting unknown keys by name.
    pub fn apply_kv(&mut self, kv: &BTreeMap<String, String>) -> Result<()> {
        for (key, value) in kv {
            self.apply_one(key, value)?;
        }
        Ok(())
    }

    fn apply_one(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| Error::ConfigValue {
                key: key.to_string(),
                detail: format!("cannot parse `{value}`"),
            })
        }
        match key {
            "levels" => self.arch.levels = parse(key, value)?,
            "base_channels" => self.arch.base_channels = parse(key, value)?,
            "channel_growth" => self.arch.channel_growth = parse(key, value)?,
            "kernel_size" => self.arch.kernel_size = parse(key, value)?,
            "bypass" => self.arch.bypass = parse(key, value)?,
            "image_size" => self.image_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "mu" => {
                self.mu = if value == "auto" {
                    MuSetting::Auto
                } else {
                    MuSetting::Fixed(parse(key, value)?)
                }
            }
            "level_weights" => {
                self.level_weights = if value == "auto" {
                    None
                } else {
                    let w: Result<Vec<f64>> = value.split(',').map(|v| parse(key, v.trim())).collect();
                    Some(w?)
                }
            }
            "seed" => self.seed = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "train_dir" => self.train_dir = Some(PathBuf::from(value)),
            "val_dir" => self.val_dir = Some(PathBuf::from(value)),
            other => return Err(Error::UnknownConfigKey { key: other.to_string() }),
        }
        Ok(())
    }

    /// Resolved settings as sorted key=value pairs.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        let mut kv = BTreeMap::new();
        let mut put = |k: &str, v: String| kv.insert(k.to_string(), v);
        put("levels", self.arch.levels.to_string());
        put("base_channels", self.arch.base_channels.to_string());
        put("channel_growth", self.arch.channel_growth.to_string());
        put("kernel_size", self.arch.kernel_size.to_string());
        put("bypass", self.arch.bypass.to_string());
        put("image_size", self.image_size.to_string());
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("learning_rate", format!("{:e}", self.learning_rate));
        put("beta1", self.beta1.to_string());
        put("beta2", self.beta2.to_string());
        put("epsilon", format!("{:e}", self.epsilon));
        put(
            "mu",
            match self.mu {
                MuSetting::Auto => "auto".to_string(),
                MuSetting::Fixed(v) => format!("{v:e}"),
            },
        );
        put(
            "level_weights",
            match &self.level_weights {
                None => "auto".to_string(),
                Some(w) => w.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
            },
        );
        put("seed", self.seed.to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        if let Some(d) = &self.train_dir {
            put("train_dir", d.display().to_string());
        }
        if let Some(d) = &self.val_dir {
            put("val_dir", d.display().to_string());
        }
        kv
    }
}

/// Parse `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(Error::ConfigValue {
            key: format!("line {}", i + 1),
            detail: format!("expected key=value, got `{line}`"),
        })?;
        out.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(out)
}

pub fn parse_kv_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_kv(&text)
}

/// Write a sorted key=value snapshot.
pub fn write_snapshot(path: &Path, kv: &BTreeMap<String, String>) -> Result<()> {
    let mut text = String::new();
    for (k, v) in kv {
        text.push_str(&format!("{k} = {v}\n"));
    }
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_defaults() {
        let cfg = TrainConfig::reference(true);
        assert_eq!(cfg.image_size, 256);
        assert_eq!(cfg.epochs, 60);
        assert_eq!(cfg.arch.levels, 3);
        assert_eq!(cfg.arch.base_channels, 8);
        assert_eq!(cfg.arch.channel_growth, 2);
        let w = cfg.effective_level_weights().unwrap();
        assert_eq!(w, vec![0.5, 0.25, 0.125]);
        let mu = cfg.mu.resolve(1500);
        assert!((mu - 4.743416490252569e-7).abs() < 1e-18, "mu = {mu:e}");
    }

    #[test]
    fn kv_roundtrip_and_overrides() {
        let mut cfg = TrainConfig::reference(true);
        let kv = parse_kv("epochs = 15\nimage_size=64\nmu = 1e-4\nbypass = false\n# comment\n").unwrap();
        cfg.apply_kv(&kv).unwrap();
        assert_eq!(cfg.epochs, 15);
        assert_eq!(cfg.image_size, 64);
        assert_eq!(cfg.mu, MuSetting::Fixed(1e-4));
        assert!(!cfg.arch.bypass);
    }

    #[test]
    fn unknown_key_is_named() {
        let mut cfg = TrainConfig::reference(true);
        let kv = parse_kv("not_a_key = 5").unwrap();
        match cfg.apply_kv(&kv) {
            Err(Error::UnknownConfigKey { key }) => assert_eq!(key, "not_a_key"),
            other => panic!("expected unknown-key error, got {other:?}"),
        }
    }

    #[test]
    fn level_weight_floor_enforced() {
        let mut cfg = TrainConfig::reference(true);
        cfg.level_weights = Some(vec![0.5, 0.0, 0.25]);
        assert!(cfg.effective_level_weights().is_err());
    }
}
