//! Mask-guided image generation: identity features from reference crops,
//! Sobel detail maps, the composed condition stack, the conditional image
//! denoiser, two-stage training and the end-to-end generation pipeline.

pub mod features;
pub mod generate;
pub mod model;
pub mod train;

use thiserror::Error;

use crate::raster::BoxPx;

pub use features::{compose_detail, sobel_high_freq, sobel_magnitude, GEN_RES, REF_RES};
pub use generate::{extract_id_features, generate_image, GenerateInputs, Generated};
pub use model::{HoiModelConfig, HoiUNet, IdFeatures, N_TOKENS_PER_REF, TOKEN_DIM};
pub use train::{train_mgig, HoiCheckpointMeta, MgigTrainConfig, PairedDataset, TrainedMgig};

#[derive(Debug, Error)]
pub enum MgigError {
    #[error(transparent)]
    Raster(#[from] crate::raster::RasterError),
    #[error(transparent)]
    Diffusion(#[from] crate::diffusion::DiffusionError),
    #[error(transparent)]
    Dataset(#[from] crate::datasets::DatasetError),
    #[error("mask-generation stage failed: {0}")]
    IamgStage(#[from] crate::iamg::IamgError),
    #[error("non-finite activations in stage {stage}")]
    NonFinite { stage: String },
    #[error("training loss became non-finite at step {0}")]
    NanLoss(usize),
    #[error("empty reference crop for {0}")]
    EmptyCrop(&'static str),
    #[error("background image must be {0}x{0}")]
    BadBackground(usize),
    #[error("box {b:?} degenerate or out of bounds for {w}x{h}")]
    BadBox { b: BoxPx, w: usize, h: usize },
    #[error("background and box must be jointly present or jointly absent")]
    HalfCondition,
    #[error("stage-2 training requires a mask-generation checkpoint")]
    MissingIamg,
    #[error(transparent)]
    Checkpoint(#[from] crate::nn::CheckpointError),
}
