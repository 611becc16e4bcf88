//! Mask-diffusion training: epsilon prediction over +-1 encoded mask
//! latents, per-item timesteps, per-step background-condition dropout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{load_sample, Manifest};
use crate::diffusion::{make_schedule, NoiseSchedule, ScheduleKind};
use crate::nn::{load_named_tensors, save_named_tensors, AdamW, Params};
use crate::rng::{stream, Stream};
use crate::synthworld::RuleConfig;
use crate::tensor::Tensor;

use super::model::{MaskModelConfig, MaskUNet, LATENT_CHANNELS, LATENT_RES};
use super::{encode_cbg, make_bg_condition, ConditionBundle, IamgError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IamgTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Probability of dropping the background condition for a step's batch.
    pub bg_dropout: f64,
    pub t_total: usize,
    pub seed: u64,
}

impl Default for IamgTrainConfig {
    fn default() -> Self {
        IamgTrainConfig {
            steps: 20_000,
            batch: 4,
            lr: 2e-4,
            bg_dropout: 0.5,
            t_total: 400,
            seed: 0,
        }
    }
}

/// Compact in-memory view of the mask-training corpus.
pub struct MaskDataset {
    bits: Vec<Vec<u8>>, // per record: 2*32*32 entries of {0,1}
    cbg: Vec<Vec<u8>>,  // per record: 3*32*32 quantized masked-background
    categories: Vec<usize>,
}

impl MaskDataset {
    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn category(&self, i: usize) -> usize {
        self.categories[i]
    }

    pub fn from_manifest(
        dir: &std::path::Path,
        manifest: &Manifest,
        _cfg: &RuleConfig,
    ) -> Result<MaskDataset, IamgError> {
        let mut bits = Vec::with_capacity(manifest.records.len());
        let mut cbg = Vec::with_capacity(manifest.records.len());
        let mut categories = Vec::with_capacity(manifest.records.len());
        for rec in &manifest.records {
            let s = load_sample(dir, rec)?;
            let mut b = vec![0u8; 2 * LATENT_RES * LATENT_RES];
            for y in 0..LATENT_RES {
                for x in 0..LATENT_RES {
                    b[y * LATENT_RES + x] = u8::from(s.mask_human.get(x, y));
                    b[LATENT_RES * LATENT_RES + y * LATENT_RES + x] =
                        u8::from(s.mask_object.get(x, y));
                }
            }
            bits.push(b);
            let mut cb = vec![0u8; 3 * LATENT_RES * LATENT_RES];
            if let (Some(bg), Some(bx)) = (&s.background, s.bbox) {
                let masked = make_bg_condition(bg, bx)?;
                let enc = encode_cbg(&masked)?;
                for (dst, src) in cb.iter_mut().zip(&enc.data) {
                    *dst = (src.clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
            cbg.push(cb);
            categories.push(rec.category_id);
        }
        Ok(MaskDataset {
            bits,
            cbg,
            categories,
        })
    }

    /// +-1 latent for record i written into `out` at batch slot `slot`.
    pub fn write_latent(&self, i: usize, out: &mut Tensor<f32>, slot: usize) {
        let n = LATENT_CHANNELS * LATENT_RES * LATENT_RES;
        for (k, &bit) in self.bits[i].iter().enumerate() {
            out.data[slot * n + k] = if bit != 0 { 1.0 } else { -1.0 };
        }
    }

    pub fn write_cbg(&self, i: usize, out: &mut Tensor<f32>, slot: usize) {
        let n = 3 * LATENT_RES * LATENT_RES;
        for (k, &v) in self.cbg[i].iter().enumerate() {
            out.data[slot * n + k] = v as f32 / 255.0;
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IamgCheckpointMeta {
    pub kind: String,
    pub model: MaskModelConfig,
    pub train: IamgTrainConfig,
    pub rules_hash: String,
    pub loss_history: Vec<f32>,
}

pub struct TrainedIamg {
    pub model: MaskUNet<f32>,
    pub meta: IamgCheckpointMeta,
    pub schedule: NoiseSchedule,
}

impl TrainedIamg {
    pub fn save(&mut self, path: &std::path::Path) -> Result<(), IamgError> {
        let meta = serde_json::to_string(&self.meta).expect("meta serializes");
        save_named_tensors(&mut self.model, &meta, path)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<TrainedIamg, IamgError> {
        let (meta_text, _) = crate::nn::checkpoint::read_checkpoint(path)?;
        let meta: IamgCheckpointMeta = serde_json::from_str(&meta_text)
            .map_err(|e| crate::nn::CheckpointError::Malformed(e.to_string()))?;
        let mut rng = stream(0, Stream::ParamInit, 0);
        let mut model = MaskUNet::<f32>::new(meta.model.clone(), &mut rng);
        load_named_tensors(&mut model, path)?;
        let schedule = make_schedule(meta.train.t_total, ScheduleKind::Linear)
            .expect("t_total validated at train time");
        Ok(TrainedIamg {
            model,
            meta,
            schedule,
        })
    }
}

/// Train the mask model over a manifest-backed dataset. Deterministic in the
/// config seed; returns the model plus its full loss history.
pub fn train_iamg(
    data: &MaskDataset,
    model_cfg: MaskModelConfig,
    cfg: &IamgTrainConfig,
) -> Result<TrainedIamg, IamgError> {
    assert!(!data.is_empty(), "empty training set");
    let schedule = make_schedule(cfg.t_total, ScheduleKind::Linear)?;
    let mut init_rng = stream(cfg.seed, Stream::ParamInit, 0);
    let mut model = MaskUNet::<f32>::new(model_cfg.clone(), &mut init_rng);
    let mut opt = AdamW::new(cfg.lr, 1e-4);

    let mut pick_rng = stream(cfg.seed, Stream::Shuffle, 1);
    let mut noise_rng = stream(cfg.seed, Stream::DiffusionNoise, 2);
    let mut t_rng = stream(cfg.seed, Stream::TimestepDraw, 3);
    let mut drop_rng = stream(cfg.seed, Stream::Dropout, 4);

    let b = cfg.batch;
    let n_lat = LATENT_CHANNELS * LATENT_RES * LATENT_RES;
    let mut history = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let mut z0 = Tensor::zeros(&[b, LATENT_CHANNELS, LATENT_RES, LATENT_RES]);
        let mut cats = Vec::with_capacity(b);
        let mut cbg = Tensor::zeros(&[b, 3, LATENT_RES, LATENT_RES]);
        for slot in 0..b {
            let i = pick_rng.gen_range(0..data.len());
            data.write_latent(i, &mut z0, slot);
            data.write_cbg(i, &mut cbg, slot);
            cats.push(data.category(i));
        }
        let drop_bg = drop_rng.gen_bool(cfg.bg_dropout);
        let cond = ConditionBundle {
            category_ids: cats,
            inter_null: vec![false; b],
            cbg_feat: if drop_bg { None } else { Some(cbg) },
        };

        // Per-item timestep and noise; z_t assembled in place.
        let ts: Vec<usize> = (0..b).map(|_| t_rng.gen_range(1..=cfg.t_total)).collect();
        let mut eps = Tensor::zeros(&z0.shape);
        for v in eps.data.iter_mut() {
            *v = noise_rng.sample::<f64, _>(rand_distr::StandardNormal) as f32;
        }
        let mut z_t = Tensor::zeros(&z0.shape);
        for slot in 0..b {
            let ab = schedule.alpha_bar(ts[slot]);
            let (sa, sb) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
            for k in 0..n_lat {
                let idx = slot * n_lat + k;
                z_t.data[idx] = sa * z0.data[idx] + sb * eps.data[idx];
            }
        }

        let pred = model.predict_noise(&z_t, &cond, &ts, true)?;
        let mut residual = Tensor::zeros(&pred.shape);
        for k in 0..residual.len() {
            residual.data[k] = pred.data[k] - eps.data[k];
        }
        let loss = residual.mean_sq();
        if !loss.is_finite() {
            return Err(IamgError::NanLoss(step));
        }
        let scale = 2.0 / residual.len() as f32;
        let dloss = residual.map(|v| v * scale);
        model.zero_grad();
        model.backward(&dloss);
        opt.step(&mut model);
        history.push(loss as f32);
    }

    Ok(TrainedIamg {
        model,
        meta: IamgCheckpointMeta {
            kind: "iamg".into(),
            model: model_cfg,
            train: cfg.clone(),
            rules_hash: format!("{:016x}", RuleConfig::builtin_hash()),
            loss_history: history,
        },
        schedule,
    })
}

/// Mean loss over a trailing window; training-quality checks use this.
pub fn windowed_loss(history: &[f32], window: usize) -> (f64, f64) {
    let w = window.min(history.len());
    let head: f64 = history.iter().take(w).map(|v| *v as f64).sum::<f64>() / w as f64;
    let tail: f64 = history.iter().rev().take(w).map(|v| *v as f64).sum::<f64>() / w as f64;
    (head, tail)
}
