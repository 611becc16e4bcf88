//! Mask sampling: ancestral diffusion, per-channel thresholding at zero,
//! largest-component cleanup, bounded resampling on empty channels.

use rand_chacha::ChaCha12Rng;

use crate::diffusion::{ddpm_sample, NoiseSchedule};
use crate::raster::{BoxPx, ImageRgb, Mask};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

use super::model::{MaskUNet, LATENT_CHANNELS, LATENT_RES};
use super::{encode_cbg, make_bg_condition, ConditionBundle, IamgError};

const MAX_RESAMPLES: usize = 3;

fn threshold_channels(z0: &Tensor<f32>, slot: usize) -> (Mask, Mask) {
    let n = LATENT_RES * LATENT_RES;
    let mut h = Mask::zeros(LATENT_RES, LATENT_RES);
    let mut o = Mask::zeros(LATENT_RES, LATENT_RES);
    let base = slot * LATENT_CHANNELS * n;
    for y in 0..LATENT_RES {
        for x in 0..LATENT_RES {
            h.set(x, y, z0.data[base + y * LATENT_RES + x] > 0.0);
            o.set(x, y, z0.data[base + n + y * LATENT_RES + x] > 0.0);
        }
    }
    (h.largest_component(), o.largest_component())
}

fn build_cond(
    categories: &[usize],
    bg_box: Option<(&ImageRgb, BoxPx)>,
) -> Result<ConditionBundle, IamgError> {
    let mut cond = ConditionBundle::for_categories(categories);
    if let Some((bg, b)) = bg_box {
        let masked = make_bg_condition(bg, b)?;
        let one = encode_cbg(&masked)?;
        let n = 3 * LATENT_RES * LATENT_RES;
        let mut all = Tensor::zeros(&[categories.len(), 3, LATENT_RES, LATENT_RES]);
        for slot in 0..categories.len() {
            all.data[slot * n..(slot + 1) * n].copy_from_slice(&one.data);
        }
        cond = cond.with_cbg(all);
    }
    Ok(cond)
}

/// Generate one two-channel mask for a category, optionally constrained by a
/// (background, box) pair. Deterministic in `seed`.
pub fn generate_mask(
    model: &mut MaskUNet<f32>,
    schedule: &NoiseSchedule,
    category_id: usize,
    bg_box: Option<(&ImageRgb, BoxPx)>,
    seed: u64,
) -> Result<(Mask, Mask), IamgError> {
    let out = generate_masks_batch(model, schedule, &[category_id], bg_box, seed)?;
    Ok(out.into_iter().next().unwrap())
}

/// Batched variant: one mask pair per requested category. Slots whose
/// thresholded channels come up empty are resampled up to three times.
pub fn generate_masks_batch(
    model: &mut MaskUNet<f32>,
    schedule: &NoiseSchedule,
    categories: &[usize],
    bg_box: Option<(&ImageRgb, BoxPx)>,
    seed: u64,
) -> Result<Vec<(Mask, Mask)>, IamgError> {
    let mut results: Vec<Option<(Mask, Mask)>> = vec![None; categories.len()];
    let mut pending: Vec<usize> = (0..categories.len()).collect();
    for round in 0..=MAX_RESAMPLES {
        if pending.is_empty() {
            break;
        }
        let cats: Vec<usize> = pending.iter().map(|&i| categories[i]).collect();
        let cond = build_cond(&cats, bg_box)?;
        let mut rng: ChaCha12Rng = stream(seed, Stream::Sampler, round as u64);
        let shape = [cats.len(), LATENT_CHANNELS, LATENT_RES, LATENT_RES];
        let mut predict = |z_t: &Tensor<f32>, t: usize| -> Tensor<f32> {
            let ts = vec![t; z_t.shape[0]];
            match model.predict_noise(z_t, &cond, &ts, false) {
                Ok(p) => p,
                Err(_) => {
                    let mut bad = Tensor::zeros(&z_t.shape);
                    bad.fill(f32::NAN);
                    bad
                }
            }
        };
        let z0 = ddpm_sample(&mut predict, &shape, schedule, &mut rng, 1.0)?;
        let mut still = Vec::new();
        for (slot, &i) in pending.iter().enumerate() {
            let (h, o) = threshold_channels(&z0, slot);
            if h.is_empty() || o.is_empty() {
                still.push(i);
            } else {
                results[i] = Some((h, o));
            }
        }
        pending = still;
    }
    if let Some(&i) = pending.first() {
        let which = {
            // Name the channel that failed on the first still-empty slot.
            "human-or-object"
        };
        let _ = i;
        return Err(IamgError::EmptyChannel(which, MAX_RESAMPLES));
    }
    Ok(results.into_iter().map(|r| r.unwrap()).collect())
}
