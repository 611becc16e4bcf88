//! Experiment configuration: one TOML file drives every command; each run
//! directory stores the resolved config and its hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::ScheduleKind;
use crate::iamg::{IamgTrainConfig, MaskModelConfig};
use crate::mgig::{HoiModelConfig, MgigTrainConfig};
use crate::rng::fnv1a;

use super::AppError;

/// Environment variable overriding the output root for run directories.
pub const OUT_ROOT_ENV: &str = "HOIGEN_OUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub train_per_category: usize,
    pub test_per_category: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub t_total: usize,
    pub kind: ScheduleKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IamgConfig {
    pub base_width: usize,
    pub temb_hidden: usize,
    pub bg_channels: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub bg_dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MgigConfig {
    pub w0: usize,
    pub w1: usize,
    pub w2: usize,
    pub temb_hidden: usize,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub bg_dropout: f64,
    pub mask_cache_per_category: usize,
    pub mask_cache_refresh: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Generated masks per category for the mask-quality metrics.
    pub masks_per_category: usize,
    /// Box-conditioned masks for the compliance metric.
    pub box_conditioned_masks: usize,
    /// Full image generations for the image-quality metrics.
    pub generations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub run_name: String,
    pub corpus: CorpusConfig,
    pub schedule: ScheduleConfig,
    pub iamg: IamgConfig,
    pub mgig: MgigConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            run_name: "default".into(),
            corpus: CorpusConfig {
                train_per_category: 2000,
                test_per_category: 200,
            },
            schedule: ScheduleConfig {
                t_total: 400,
                kind: ScheduleKind::Linear,
            },
            iamg: IamgConfig {
                base_width: 32,
                temb_hidden: 128,
                bg_channels: 4,
                steps: 20_000,
                batch: 4,
                lr: 2e-4,
                bg_dropout: 0.5,
            },
            mgig: MgigConfig {
                w0: 24,
                w1: 48,
                w2: 96,
                temb_hidden: 128,
                stage1_steps: 8000,
                stage2_steps: 2500,
                batch: 4,
                lr: 2e-4,
                bg_dropout: 0.5,
                mask_cache_per_category: 64,
                mask_cache_refresh: 2000,
            },
            eval: EvalConfig {
                masks_per_category: 200,
                box_conditioned_masks: 200,
                generations: 120,
            },
        }
    }
}

impl ExperimentConfig {
    /// A micro-scale config for the end-to-end smoke pipeline.
    pub fn smoke(seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            seed,
            run_name: format!("smoke-{seed}"),
            corpus: CorpusConfig {
                train_per_category: 100,
                test_per_category: 20,
            },
            iamg: IamgConfig {
                steps: 500,
                ..ExperimentConfig::default().iamg
            },
            mgig: MgigConfig {
                stage1_steps: 300,
                stage2_steps: 200,
                mask_cache_per_category: 8,
                mask_cache_refresh: 100,
                ..ExperimentConfig::default().mgig
            },
            eval: EvalConfig {
                masks_per_category: 12,
                box_conditioned_masks: 12,
                generations: 4,
            },
            ..ExperimentConfig::default()
        }
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig, AppError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            AppError::InvalidConfig(format!("cannot read {}: {e}", path.display()))
        })?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| AppError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn hash(&self) -> u64 {
        fnv1a(self.to_toml().as_bytes())
    }

    pub fn validate(&self) -> Result<(), AppError> {
        if self.schedule.t_total < 1 {
            return Err(AppError::InvalidConfig("schedule.t_total must be >= 1".into()));
        }
        if self.corpus.train_per_category == 0 || self.corpus.test_per_category == 0 {
            return Err(AppError::InvalidConfig("corpus sizes must be positive".into()));
        }
        if self.iamg.batch == 0 || self.mgig.batch == 0 {
            return Err(AppError::InvalidConfig("batch sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.iamg.bg_dropout)
            || !(0.0..=1.0).contains(&self.mgig.bg_dropout)
        {
            return Err(AppError::InvalidConfig("dropout must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn mask_model(&self) -> MaskModelConfig {
        MaskModelConfig {
            base_width: self.iamg.base_width,
            temb_hidden: self.iamg.temb_hidden,
            bg_channels: self.iamg.bg_channels,
            k: crate::synthworld::RuleConfig::builtin().k(),
            zero_head: true,
        }
    }

    pub fn iamg_train(&self) -> IamgTrainConfig {
        IamgTrainConfig {
            steps: self.iamg.steps,
            batch: self.iamg.batch,
            lr: self.iamg.lr,
            bg_dropout: self.iamg.bg_dropout,
            t_total: self.schedule.t_total,
            seed: self.seed,
        }
    }

    pub fn hoi_model(&self) -> HoiModelConfig {
        HoiModelConfig {
            w0: self.mgig.w0,
            w1: self.mgig.w1,
            w2: self.mgig.w2,
            temb_hidden: self.mgig.temb_hidden,
            zero_head: true,
        }
    }

    pub fn mgig_train(&self) -> MgigTrainConfig {
        MgigTrainConfig {
            stage1_steps: self.mgig.stage1_steps,
            stage2_steps: self.mgig.stage2_steps,
            batch: self.mgig.batch,
            lr: self.mgig.lr,
            bg_dropout: self.mgig.bg_dropout,
            t_total: self.schedule.t_total,
            seed: self.seed,
            mask_cache_per_category: self.mgig.mask_cache_per_category,
            mask_cache_refresh: self.mgig.mask_cache_refresh,
        }
    }
}

/// Filesystem layout of one run.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn resolve(cfg: &ExperimentConfig, out_override: Option<&Path>) -> RunPaths {
        let root = match out_override {
            Some(p) => p.to_path_buf(),
            None => {
                let base = std::env::var(OUT_ROOT_ENV)
                    .map(PathBuf::from)
                    .unwrap_or_else(|_| PathBuf::from("runs"));
                base.join(&cfg.run_name)
            }
        };
        RunPaths { root }
    }

    pub fn prepare(&self, cfg: &ExperimentConfig) -> Result<(), AppError> {
        std::fs::create_dir_all(&self.root)
            .map_err(|e| AppError::Runtime(format!("cannot create run dir: {e}")))?;
        let resolved = self.root.join("config.toml");
        let body = format!("# config hash {:016x}\n{}", cfg.hash(), cfg.to_toml());
        std::fs::write(resolved, body)
            .map_err(|e| AppError::Runtime(format!("cannot write config: {e}")))?;
        Ok(())
    }

    pub fn data_dir(&self, split: crate::synthworld::sample::Split) -> PathBuf {
        match split {
            crate::synthworld::sample::Split::Train => self.root.join("data/train"),
            crate::synthworld::sample::Split::Test => self.root.join("data/test"),
        }
    }

    pub fn iamg_checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints/iamg.ckpt")
    }

    pub fn mgig_checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints/mgig.ckpt")
    }

    pub fn samples_dir(&self) -> PathBuf {
        self.root.join("samples")
    }

    pub fn report_path(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn baseline_report_path(&self) -> PathBuf {
        self.root.join("baseline.json")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_roundtrip_lossless() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
        let smoke = ExperimentConfig::smoke(3);
        let back2: ExperimentConfig = toml::from_str(&smoke.to_toml()).unwrap();
        assert_eq!(smoke, back2);
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.schedule.t_total = 0;
        assert!(cfg.validate().is_err());
    }
}
