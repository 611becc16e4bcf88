//! Interaction-aware mask generation: a conditional diffusion model over
//! two-channel (human, object) foreground masks, conditioned on the
//! interaction verb and optionally on a masked background image, plus the
//! retrieval-based variant backed by a mask bank.

pub mod bank;
pub mod generate;
pub mod model;
pub mod train;

use thiserror::Error;

use crate::diffusion::DiffusionError;
use crate::raster::{BoxPx, ImageRgb, RasterError};
use crate::synthworld::{RuleConfig, RuleError};
use crate::tensor::Tensor;

pub use bank::{build_mask_bank, position_word, retrieve_mask, BankEntry, MaskBank};
pub use generate::{generate_mask, generate_masks_batch};
pub use model::{MaskModelConfig, MaskUNet, INTER_EMBED_DIM, LATENT_CHANNELS, LATENT_RES};
pub use train::{train_iamg, IamgCheckpointMeta, IamgTrainConfig, MaskDataset, TrainedIamg};

#[derive(Debug, Error)]
pub enum IamgError {
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Dataset(#[from] crate::datasets::DatasetError),
    #[error("non-finite activations in stage {stage}")]
    NonFinite { stage: String },
    #[error("training loss became non-finite at step {0}")]
    NanLoss(usize),
    #[error("background image must be {0}x{0}")]
    BadBackground(usize),
    #[error("box {b:?} degenerate or out of bounds for {w}x{h}")]
    BadBox { b: BoxPx, w: usize, h: usize },
    #[error("background and box must be jointly present or jointly absent")]
    HalfCondition,
    #[error("mask channel {0} still empty after {1} resampling attempts")]
    EmptyChannel(&'static str, usize),
    #[error("mask bank is empty")]
    EmptyBank,
    #[error(transparent)]
    Checkpoint(#[from] crate::nn::CheckpointError),
}

/// Conditioning for one batch: category ids (rows of the interaction table),
/// null flags, and the frozen-encoded background condition.
#[derive(Debug, Clone)]
pub struct ConditionBundle {
    pub category_ids: Vec<usize>,
    pub inter_null: Vec<bool>,
    /// E_I(C_bg) stand-in: the masked background average-pooled to the mask
    /// resolution, (batch, 3, 32, 32). None when the condition is dropped.
    pub cbg_feat: Option<Tensor<f32>>,
}

impl ConditionBundle {
    pub fn for_categories(ids: &[usize]) -> Self {
        ConditionBundle {
            category_ids: ids.to_vec(),
            inter_null: vec![false; ids.len()],
            cbg_feat: None,
        }
    }

    pub fn with_cbg(mut self, cbg: Tensor<f32>) -> Self {
        self.cbg_feat = Some(cbg);
        self
    }
}

/// Parse an interaction prompt ("A person is riding the bar") or a bare verb
/// into a category id. Unknown verbs are rejected with the offending token.
pub fn parse_interaction(text: &str, cfg: &RuleConfig) -> Result<usize, RuleError> {
    let tokens: Vec<String> = text
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_ascii_lowercase())
        .collect();
    if let Ok(id) = text.trim().parse::<usize>() {
        return cfg.category(id).map(|c| c.id);
    }
    for t in &tokens {
        if let Some(cat) = cfg.by_verb(t) {
            return Ok(cat.id);
        }
    }
    // Name the verb-position token when the template shape is recognizable.
    let candidate = tokens
        .iter()
        .position(|t| t == "is")
        .and_then(|i| tokens.get(i + 1))
        .cloned()
        .or_else(|| {
            tokens
                .iter()
                .find(|t| !matches!(t.as_str(), "a" | "an" | "the" | "person" | "is"))
                .cloned()
        })
        .unwrap_or_else(|| text.trim().to_string());
    Err(RuleError::UnknownVerb(candidate))
}

/// Mask the box region of a background image with the fill value 0.
pub fn make_bg_condition(bg: &ImageRgb, b: BoxPx) -> Result<ImageRgb, IamgError> {
    if !b.valid_for(bg.w, bg.h) {
        return Err(IamgError::BadBox {
            b,
            w: bg.w,
            h: bg.h,
        });
    }
    let mut out = bg.clone();
    for y in b.y0..=b.y1 {
        for x in b.x0..=b.x1 {
            out.put(x as usize, y as usize, [0.0, 0.0, 0.0]);
        }
    }
    Ok(out)
}

/// The frozen image-encoder stand-in: 2x average pooling of the 64px masked
/// background down to the 32px mask grid, as a (1, 3, 32, 32) tensor.
pub fn encode_cbg(cbg: &ImageRgb) -> Result<Tensor<f32>, IamgError> {
    if cbg.w != 2 * LATENT_RES || cbg.h != 2 * LATENT_RES {
        return Err(IamgError::BadBackground(2 * LATENT_RES));
    }
    let small = cbg.downsample2();
    let mut t = Tensor::zeros(&[1, 3, LATENT_RES, LATENT_RES]);
    for y in 0..LATENT_RES {
        for x in 0..LATENT_RES {
            let c = small.get(x, y);
            for k in 0..3 {
                t.data[k * LATENT_RES * LATENT_RES + y * LATENT_RES + x] = c[k];
            }
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::quantize;

    #[test]
    fn prompt_parsing() {
        let cfg = RuleConfig::builtin();
        assert_eq!(parse_interaction("A person is riding the bar", cfg).unwrap(), 1);
        assert_eq!(parse_interaction("kick", cfg).unwrap(), 2);
        assert_eq!(parse_interaction("3", cfg).unwrap(), 3);
        match parse_interaction("A person is teleporting the circle", cfg) {
            Err(RuleError::UnknownVerb(t)) => assert_eq!(t, "teleporting"),
            other => panic!("expected UnknownVerb, got {other:?}"),
        }
    }

    #[test]
    fn bg_condition_region_arithmetic() {
        // Gradient background, left half masked: left half zero, right half
        // untouched.
        let mut bg = ImageRgb::zeros(64, 64);
        for y in 0..64 {
            for x in 0..64 {
                let g = quantize(0.4 + 0.2 * y as f32 / 63.0);
                bg.put(x, y, [g, g, g]);
            }
        }
        let b = BoxPx {
            x0: 0,
            y0: 0,
            x1: 31,
            y1: 63,
        };
        let cbg = make_bg_condition(&bg, b).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                if x < 32 {
                    assert_eq!(cbg.get(x, y), [0.0, 0.0, 0.0]);
                } else {
                    assert_eq!(cbg.get(x, y), bg.get(x, y));
                }
            }
        }
        // Full-frame box: all zeros.
        let full = BoxPx {
            x0: 0,
            y0: 0,
            x1: 63,
            y1: 63,
        };
        let all = make_bg_condition(&bg, full).unwrap();
        assert!(all.data.iter().all(|v| *v == 0.0));
        // Out-of-bounds box rejected.
        let bad = BoxPx {
            x0: 10,
            y0: 10,
            x1: 64,
            y1: 20,
        };
        assert!(make_bg_condition(&bg, bad).is_err());
    }
}
