//! Training-corpus construction over the synthetic world.
//!
//! Two record sources mirror the two collection procedures: image-adapted
//! samples re-pose the human reference against a fixed ground-truth scene,
//! and video-pair samples take reference and target from different frames of
//! a short clip in which the same identity pair keeps interacting.

pub mod build;
pub mod manifest;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{BoxPx, ImageRgb, Mask, RasterError};
use crate::synthworld::{Pose, RuleConfig, Scene, SynthError};

pub use build::{
    build_image_adapted_sample, build_split, build_video_pair_sample, generate_clip, render_prompt,
    validate_sample,
};
pub use manifest::{load_manifest, load_sample, write_manifest, Manifest, ManifestRecord};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Rule(#[from] crate::synthworld::RuleError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("clip needs at least 4 frames, got {0}")]
    TooFewFrames(usize),
    #[error("no clip satisfying '{verb}' after {retries} keypose retries")]
    ClipRejected { verb: String, retries: u32 },
    #[error("frame indices must differ and lie in 0..{len}, got i={i} j={j}")]
    BadFrameIndices { i: usize, j: usize, len: usize },
    #[error("manifest io at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("manifest parse error: {0}")]
    Parse(String),
    #[error("manifest references missing file {0}")]
    MissingFile(String),
    #[error("checksum mismatch for {0} (file changed since the manifest was written)")]
    ChecksumMismatch(String),
    #[error("manifest record {id}: {reason}")]
    BadRecord { id: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    ImageAdapted,
    VideoPair,
}

/// One training record, fully materialized.
#[derive(Debug, Clone, PartialEq)]
pub struct HOISample {
    /// Reference crop of the target human under an unrelated pose.
    pub human_ref: ImageRgb,
    /// Reference crop of the target object.
    pub object_ref: ImageRgb,
    /// Interaction prompt, rendered from the template.
    pub prompt: String,
    pub category_id: usize,
    /// Ground-truth image, canvas resolution.
    pub gt_image: ImageRgb,
    /// Ground-truth foreground masks at the mask resolution.
    pub mask_human: Mask,
    pub mask_object: Mask,
    /// Optional background image (foreground inpainted away).
    pub background: Option<ImageRgb>,
    /// Optional union box of the foreground, canvas pixel coords.
    pub bbox: Option<BoxPx>,
    pub source: SampleSource,
    /// Scene behind the ground truth; carries palettes and pose for metrics.
    pub scene: Scene,
    /// Pose of the human in the reference crop.
    pub ref_pose: Pose,
}

/// A short clip: identical identities, continuously interpolated pose, one
/// verb annotation per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoClip {
    pub frames: Vec<Scene>,
    pub verbs: Vec<usize>,
    pub seed: u64,
}

impl VideoClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Structural invariants: fixed identities, >= 4 frames, bounded
    /// consecutive joint deltas, every frame passing its annotated verb.
    pub fn validate(&self, cfg: &RuleConfig) -> Result<(), String> {
        if self.frames.len() < 4 {
            return Err(format!("clip too short: {}", self.frames.len()));
        }
        let first = &self.frames[0];
        for (i, f) in self.frames.iter().enumerate() {
            if f.human != first.human || f.object != first.object {
                return Err(format!("identity drift at frame {i}"));
            }
        }
        for (i, w) in self.frames.windows(2).enumerate() {
            let da = w[0].pose.angles();
            let db = w[1].pose.angles();
            for j in 0..8 {
                if (da[j] - db[j]).abs() > 0.2 + 1e-5 {
                    return Err(format!("joint delta {j} too large at frame {i}"));
                }
            }
        }
        for (i, (f, &v)) in self.frames.iter().zip(&self.verbs).enumerate() {
            let cat = cfg.category(v).map_err(|e| e.to_string())?;
            let (_, hm, om) = crate::synthworld::render_scene(
                f,
                (build::CANVAS, build::CANVAS),
            )
            .map_err(|e| e.to_string())?;
            let ok = crate::synthworld::check_interaction(&hm, &om, cat, cfg)
                .map_err(|e| e.to_string())?;
            if !ok {
                return Err(format!("frame {i} fails its verb '{}'", cat.verb));
            }
        }
        Ok(())
    }
}
