use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use cofuse::fusion::FusionStrategy;
use cofuse::model::{ModelConfig, Variant};
use cofuse::network::NetworkConfig;
use cofuse::train::TrainConfig;
use serde::{Deserialize, Serialize};

/// Everything a run needs. Loaded from `--config`, then overridden by flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub hsi: Option<PathBuf>,
    pub lidar: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
    pub variant: Variant,
    pub fusion: Option<FusionStrategy>,
    pub k: usize,
    pub patch: usize,
    pub widths: [usize; 3],
    pub coupled: bool,
    pub lambda1: f64,
    pub lambda2: f64,
    pub batch: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let net = NetworkConfig::default();
        let train = TrainConfig::default();
        Self {
            hsi: None,
            lidar: None,
            train_labels: None,
            test_labels: None,
            checkpoint: None,
            out: PathBuf::from("out"),
            variant: Variant::Decision(FusionStrategy::Sum),
            fusion: None,
            k: net.k,
            patch: net.p,
            widths: net.widths,
            coupled: net.coupled,
            lambda1: train.lambda1,
            lambda2: train.lambda2,
            batch: train.batch_size,
            lr: train.learning_rate,
            epochs: train.epochs,
            seed: train.seed,
        }
    }
}

#[derive(Args, Clone, Debug, Default)]
pub struct RunFlags {
    /// JSON config file; flags take precedence over its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CNN-HS, CNN-LiDAR, CNN-F-{C,M,S} or CNN-DF-{C,M,S}.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Hyperspectral raster header (JSON).
    #[arg(long)]
    pub hsi: Option<PathBuf>,
    /// LiDAR raster header (JSON).
    #[arg(long)]
    pub lidar: Option<PathBuf>,
    #[arg(long)]
    pub train_labels: Option<PathBuf>,
    #[arg(long)]
    pub test_labels: Option<PathBuf>,
    /// Model checkpoint to write (train) or read (eval, map).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Retained principal components.
    #[arg(long)]
    pub k: Option<usize>,
    /// Patch side length (odd).
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Feature fusion rule; replaces the letter of a fused variant.
    #[arg(long)]
    pub fusion: Option<FusionStrategy>,
    /// Give each branch its own second and third conv blocks.
    #[arg(long)]
    pub no_coupling: bool,
}

impl RunFlags {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:ident),* $(,)?) => {
                $(if let Some(v) = &self.$field { cfg.$target = v.clone().into(); })*
            };
        }
        set!(
            out => out, seed => seed, variant => variant, k => k, patch => patch,
            lambda1 => lambda1, lambda2 => lambda2, epochs => epochs, batch => batch, lr => lr,
        );
        set!(hsi => hsi, lidar => lidar, train_labels => train_labels,
            test_labels => test_labels, checkpoint => checkpoint, fusion => fusion);
        if self.no_coupling {
            cfg.coupled = false;
        }
        cfg.normalize()?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    /// Folds `fusion` into the variant so the two cannot disagree.
    pub fn normalize(&mut self) -> Result<()> {
        if let Some(f) = self.fusion {
            if self.variant.fusion().is_none() {
                bail!(
                    "--fusion does not apply to single-branch variant {}",
                    self.variant
                );
            }
            self.variant = self.variant.with_fusion(f);
        }
        self.fusion = self.variant.fusion();
        Ok(())
    }

    pub fn model_config(&self, classes: usize) -> ModelConfig {
        ModelConfig {
            network: NetworkConfig {
                k: self.k,
                p: self.patch,
                widths: self.widths,
                classes,
                coupled: self.coupled,
            },
            variant: self.variant,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            batch_size: self.batch,
            learning_rate: self.lr,
            epochs: self.epochs,
            seed: self.seed,
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join("model.ckpt"))
    }

    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("config.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}

pub fn require<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    match v {
        Some(p) => Ok(p),
        None => bail!(
            "missing --{flag} (or \"{}\" in the config file)",
            flag.replace('-', "_")
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"epochs": 7, "k": 5, "variant": "CNN-F-C"}"#).unwrap();
        let flags = RunFlags {
            config: Some(path),
            k: Some(9),
            fusion: Some(FusionStrategy::Max),
            no_coupling: true,
            ..RunFlags::default()
        };
        let cfg = flags.resolve().unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.k, 9);
        assert!(!cfg.coupled);
        assert_eq!(cfg.variant, Variant::Feature(FusionStrategy::Max));
        assert_eq!(cfg.fusion, Some(FusionStrategy::Max));
    }

    #[test]
    fn rejects_unknown_fields_and_bad_fusion() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"epoch": 7}"#).unwrap();
        let flags = RunFlags {
            config: Some(path),
            ..RunFlags::default()
        };
        assert!(flags.resolve().is_err());
        let flags = RunFlags {
            variant: Some(Variant::Hs),
            fusion: Some(FusionStrategy::Sum),
            ..RunFlags::default()
        };
        assert!(flags.resolve().is_err());
    }

    #[test]
    fn echoed_config_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunFlags {
            seed: Some(3),
            ..RunFlags::default()
        }
        .resolve()
        .unwrap();
        cfg.echo(dir.path()).unwrap();
        let flags = RunFlags {
            config: Some(dir.path().join("config.json")),
            ..RunFlags::default()
        };
        assert_eq!(flags.resolve().unwrap(), cfg);
    }
}
