//! Two-stage training for the image denoiser: stage 1 conditions on
//! ground-truth masks, stage 2 on masks sampled from a frozen mask-diffusion
//! checkpoint (cached per category, refreshed periodically).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{load_sample, Manifest};
use crate::diffusion::{make_schedule, NoiseSchedule, ScheduleKind};
use crate::iamg::{generate_masks_batch, TrainedIamg};
use crate::nn::{load_named_tensors, save_named_tensors, AdamW, Params};
use crate::raster::{BoxPx, ImageRgb, Mask, Plane};
use crate::rng::{stream, Stream};
use crate::synthworld::RuleConfig;
use crate::tensor::Tensor;

use super::features::{compose_detail, sobel_high_freq, GEN_RES, REF_RES};
use super::model::{HoiModelConfig, HoiUNet, IMG_CHANNELS};
use super::MgigError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MgigTrainConfig {
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub bg_dropout: f64,
    pub t_total: usize,
    pub seed: u64,
    /// IAMG mask cache: entries per category, refresh period in steps.
    pub mask_cache_per_category: usize,
    pub mask_cache_refresh: usize,
}

impl Default for MgigTrainConfig {
    fn default() -> Self {
        MgigTrainConfig {
            stage1_steps: 8000,
            stage2_steps: 2500,
            batch: 4,
            lr: 2e-4,
            bg_dropout: 0.5,
            t_total: 400,
            seed: 0,
            mask_cache_per_category: 64,
            mask_cache_refresh: 2000,
        }
    }
}

/// Compact in-memory corpus for image training: quantized rasters plus
/// precomputed Sobel maps.
pub struct PairedDataset {
    gt: Vec<Vec<u8>>,        // (3*64*64) each
    bg: Vec<Vec<u8>>,        // (3*64*64) each
    crops: Vec<Vec<u8>>,     // (2*3*32*32) each: human then object, resized
    f_high: Vec<Vec<f32>>,   // (32*64) each
    mask_bits: Vec<Vec<u8>>, // (2*32*32)
    bbox: Vec<BoxPx>,
    categories: Vec<usize>,
}

fn imgrgb_to_u8(img: &ImageRgb) -> Vec<u8> {
    img.data
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

fn write_chw(dst: &mut [f32], src: &[u8], c: usize, h: usize, w: usize) {
    // interleaved u8 (h, w, c) -> planar f32 (c, h, w)
    for y in 0..h {
        for x in 0..w {
            for k in 0..c {
                dst[k * h * w + y * w + x] = src[(y * w + x) * c + k] as f32 / 255.0;
            }
        }
    }
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn from_manifest(
        dir: &std::path::Path,
        manifest: &Manifest,
        _cfg: &RuleConfig,
    ) -> Result<PairedDataset, MgigError> {
        let n = manifest.records.len();
        let mut ds = PairedDataset {
            gt: Vec::with_capacity(n),
            bg: Vec::with_capacity(n),
            crops: Vec::with_capacity(n),
            f_high: Vec::with_capacity(n),
            mask_bits: Vec::with_capacity(n),
            bbox: Vec::with_capacity(n),
            categories: Vec::with_capacity(n),
        };
        for rec in &manifest.records {
            let s = load_sample(dir, rec)?;
            ds.gt.push(imgrgb_to_u8(&s.gt_image));
            let bg = s.background.as_ref().expect("corpus records carry backgrounds");
            ds.bg.push(imgrgb_to_u8(bg));
            let hr = s.human_ref.resize_bilinear(REF_RES, REF_RES);
            let or = s.object_ref.resize_bilinear(REF_RES, REF_RES);
            let mut c = imgrgb_to_u8(&hr);
            c.extend(imgrgb_to_u8(&or));
            ds.crops.push(c);
            let fh = sobel_high_freq(&s.human_ref, &s.object_ref);
            ds.f_high.push(fh.data);
            let mut bits = vec![0u8; 2 * 32 * 32];
            for y in 0..32 {
                for x in 0..32 {
                    bits[y * 32 + x] = u8::from(s.mask_human.get(x, y));
                    bits[32 * 32 + y * 32 + x] = u8::from(s.mask_object.get(x, y));
                }
            }
            ds.mask_bits.push(bits);
            ds.bbox.push(s.bbox.expect("corpus records carry boxes"));
            ds.categories.push(rec.category_id);
        }
        Ok(ds)
    }

    pub fn category(&self, i: usize) -> usize {
        self.categories[i]
    }

    fn gt_latent(&self, i: usize, out: &mut Tensor<f32>, slot: usize) {
        let n = IMG_CHANNELS * GEN_RES * GEN_RES;
        let mut plane = vec![0.0f32; n];
        write_chw(&mut plane, &self.gt[i], 3, GEN_RES, GEN_RES);
        for (k, v) in plane.iter().enumerate() {
            out.data[slot * n + k] = v * 2.0 - 1.0;
        }
    }

    fn crop_tensor(&self, i: usize, out: &mut Tensor<f32>, pair_slot: usize) {
        let n = 3 * REF_RES * REF_RES;
        let mut tmp = vec![0.0f32; n];
        write_chw(&mut tmp, &self.crops[i][..n], 3, REF_RES, REF_RES);
        out.data[2 * pair_slot * n..(2 * pair_slot + 1) * n].copy_from_slice(&tmp);
        write_chw(&mut tmp, &self.crops[i][n..], 3, REF_RES, REF_RES);
        out.data[(2 * pair_slot + 1) * n..(2 * pair_slot + 2) * n].copy_from_slice(&tmp);
    }

    pub fn masks(&self, i: usize) -> (Mask, Mask) {
        let mut h = Mask::zeros(32, 32);
        let mut o = Mask::zeros(32, 32);
        for y in 0..32 {
            for x in 0..32 {
                h.set(x, y, self.mask_bits[i][y * 32 + x] != 0);
                o.set(x, y, self.mask_bits[i][32 * 32 + y * 32 + x] != 0);
            }
        }
        (h, o)
    }

    pub fn background_image(&self, i: usize) -> ImageRgb {
        let mut img = ImageRgb::zeros(GEN_RES, GEN_RES);
        for y in 0..GEN_RES {
            for x in 0..GEN_RES {
                let base = (y * GEN_RES + x) * 3;
                img.put(
                    x,
                    y,
                    [
                        self.bg[i][base] as f32 / 255.0,
                        self.bg[i][base + 1] as f32 / 255.0,
                        self.bg[i][base + 2] as f32 / 255.0,
                    ],
                );
            }
        }
        img
    }

    pub fn f_high_plane(&self, i: usize) -> Plane {
        Plane {
            w: 2 * REF_RES,
            h: REF_RES,
            data: self.f_high[i].clone(),
        }
    }

    pub fn bbox_of(&self, i: usize) -> BoxPx {
        self.bbox[i]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HoiCheckpointMeta {
    pub kind: String,
    pub model: HoiModelConfig,
    pub train: MgigTrainConfig,
    pub rules_hash: String,
    pub stage1_loss: Vec<f32>,
    pub stage2_loss: Vec<f32>,
    /// Fraction of steps whose batch kept the background condition.
    pub bg_present_fraction: f32,
}

pub struct TrainedMgig {
    pub model: HoiUNet<f32>,
    pub meta: HoiCheckpointMeta,
    pub schedule: NoiseSchedule,
}

impl TrainedMgig {
    pub fn save(&mut self, path: &std::path::Path) -> Result<(), MgigError> {
        let meta = serde_json::to_string(&self.meta).expect("meta serializes");
        save_named_tensors(&mut self.model, &meta, path)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<TrainedMgig, MgigError> {
        let (meta_text, _) = crate::nn::checkpoint::read_checkpoint(path)?;
        let meta: HoiCheckpointMeta = serde_json::from_str(&meta_text)
            .map_err(|e| crate::nn::CheckpointError::Malformed(e.to_string()))?;
        let mut rng = stream(0, Stream::ParamInit, 0);
        let mut model = HoiUNet::<f32>::new(meta.model.clone(), &mut rng);
        load_named_tensors(&mut model, path)?;
        let schedule = make_schedule(meta.train.t_total, ScheduleKind::Linear)
            .expect("t_total validated at train time");
        Ok(TrainedMgig {
            model,
            meta,
            schedule,
        })
    }
}

/// Masks used for conditioning in a training step.
enum MaskSource<'d> {
    GroundTruth(&'d PairedDataset),
    Cache(Vec<Vec<(Mask, Mask)>>),
}

/// Train the image denoiser. Stage 1 uses ground-truth masks; stage 2 draws
/// conditioning masks from the frozen mask model, cached per category.
pub fn train_mgig(
    data: &PairedDataset,
    iamg: Option<&mut TrainedIamg>,
    model_cfg: HoiModelConfig,
    cfg: &MgigTrainConfig,
    k: usize,
) -> Result<TrainedMgig, MgigError> {
    assert!(!data.is_empty(), "empty training set");
    if cfg.stage2_steps > 0 && iamg.is_none() {
        return Err(MgigError::MissingIamg);
    }
    let schedule = make_schedule(cfg.t_total, ScheduleKind::Linear)?;
    let mut init_rng = stream(cfg.seed, Stream::ParamInit, 1);
    let mut model = HoiUNet::<f32>::new(model_cfg.clone(), &mut init_rng);
    let mut opt = AdamW::new(cfg.lr, 1e-4);

    let mut pick_rng = stream(cfg.seed, Stream::Shuffle, 11);
    let mut noise_rng = stream(cfg.seed, Stream::DiffusionNoise, 12);
    let mut t_rng = stream(cfg.seed, Stream::TimestepDraw, 13);
    let mut drop_rng = stream(cfg.seed, Stream::Dropout, 14);

    let mut stage1_loss = Vec::with_capacity(cfg.stage1_steps);
    let mut stage2_loss = Vec::with_capacity(cfg.stage2_steps);
    let mut bg_present_steps = 0usize;

    let mut iamg = iamg;
    let run_stage = |model: &mut HoiUNet<f32>,
                         opt: &mut AdamW,
                         steps: usize,
                         stage2: bool,
                         iamg: Option<&mut TrainedIamg>,
                         losses: &mut Vec<f32>,
                         pick_rng: &mut rand_chacha::ChaCha12Rng,
                         noise_rng: &mut rand_chacha::ChaCha12Rng,
                         t_rng: &mut rand_chacha::ChaCha12Rng,
                         drop_rng: &mut rand_chacha::ChaCha12Rng,
                         bg_present_steps: &mut usize|
     -> Result<(), MgigError> {
        let b = cfg.batch;
        let n_lat = IMG_CHANNELS * GEN_RES * GEN_RES;
        let mut source = MaskSource::GroundTruth(data);
        let mut iamg = iamg;
        for step in 0..steps {
            if stage2 {
                let refresh = step % cfg.mask_cache_refresh == 0;
                if refresh {
                    let tr = iamg.as_deref_mut().expect("stage-2 checked for a checkpoint");
                    let mut cache = Vec::with_capacity(k);
                    for cat in 0..k {
                        let cats = vec![cat; cfg.mask_cache_per_category];
                        let masks = generate_masks_batch(
                            &mut tr.model,
                            &tr.schedule,
                            &cats,
                            None,
                            crate::rng::mix(cfg.seed ^ (step as u64) ^ ((cat as u64) << 40)),
                        )?;
                        cache.push(masks);
                    }
                    source = MaskSource::Cache(cache);
                }
            }

            let mut z0 = Tensor::zeros(&[b, IMG_CHANNELS, GEN_RES, GEN_RES]);
            let mut crops = Tensor::zeros(&[2 * b, 3, REF_RES, REF_RES]);
            let mut f_detail = Tensor::zeros(&[b, 3, GEN_RES, GEN_RES]);
            let use_bg = !drop_rng.gen_bool(cfg.bg_dropout);
            if use_bg {
                *bg_present_steps += 1;
            }
            for slot in 0..b {
                let i = pick_rng.gen_range(0..data.len());
                data.gt_latent(i, &mut z0, slot);
                data.crop_tensor(i, &mut crops, slot);
                let (mh, mo) = match &source {
                    MaskSource::GroundTruth(d) => d.masks(i),
                    MaskSource::Cache(c) => {
                        let cat = data.category(i);
                        let list = &c[cat];
                        list[pick_rng.gen_range(0..list.len())].clone()
                    }
                };
                let fh = data.f_high_plane(i);
                let bgimg;
                let bg_box = if use_bg {
                    bgimg = data.background_image(i);
                    Some((&bgimg, data.bbox_of(i)))
                } else {
                    None
                };
                let fd = compose_detail(&mh, &mo, &fh, bg_box)?;
                let n = 3 * GEN_RES * GEN_RES;
                f_detail.data[slot * n..(slot + 1) * n].copy_from_slice(&fd.data);
            }

            let ts: Vec<usize> = (0..b).map(|_| t_rng.gen_range(1..=cfg.t_total)).collect();
            let mut eps = Tensor::zeros(&z0.shape);
            for v in eps.data.iter_mut() {
                *v = noise_rng.sample::<f64, _>(rand_distr::StandardNormal) as f32;
            }
            let mut z_t = Tensor::zeros(&z0.shape);
            for slot in 0..b {
                let ab = schedule.alpha_bar(ts[slot]);
                let (sa, sb) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
                for kk in 0..n_lat {
                    let idx = slot * n_lat + kk;
                    z_t.data[idx] = sa * z0.data[idx] + sb * eps.data[idx];
                }
            }

            let tokens = model.encode_identity(&crops, true);
            let pred = model.predict_noise(&z_t, &f_detail, &tokens, &ts, true)?;
            let mut residual = Tensor::zeros(&pred.shape);
            for kk in 0..residual.len() {
                residual.data[kk] = pred.data[kk] - eps.data[kk];
            }
            let loss = residual.mean_sq();
            if !loss.is_finite() {
                return Err(MgigError::NanLoss(step));
            }
            let scale = 2.0 / residual.len() as f32;
            let dloss = residual.map(|v| v * scale);
            model.zero_grad();
            model.backward(&dloss);
            opt.step(model);
            losses.push(loss as f32);
        }
        Ok(())
    };

    run_stage(
        &mut model,
        &mut opt,
        cfg.stage1_steps,
        false,
        None,
        &mut stage1_loss,
        &mut pick_rng,
        &mut noise_rng,
        &mut t_rng,
        &mut drop_rng,
        &mut bg_present_steps,
    )?;
    run_stage(
        &mut model,
        &mut opt,
        cfg.stage2_steps,
        true,
        iamg.as_deref_mut(),
        &mut stage2_loss,
        &mut pick_rng,
        &mut noise_rng,
        &mut t_rng,
        &mut drop_rng,
        &mut bg_present_steps,
    )?;

    let total_steps = (cfg.stage1_steps + cfg.stage2_steps).max(1);
    Ok(TrainedMgig {
        model,
        meta: HoiCheckpointMeta {
            kind: "mgig".into(),
            model: model_cfg,
            train: cfg.clone(),
            rules_hash: format!("{:016x}", RuleConfig::builtin_hash()),
            stage1_loss,
            stage2_loss,
            bg_present_fraction: bg_present_steps as f32 / total_steps as f32,
        },
        schedule,
    })
}
