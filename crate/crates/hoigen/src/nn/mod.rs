//! Hand-rolled neural-network layers with explicit backward passes.
//!
//! The models in this crate are small enough that a full autodiff framework
//! buys nothing; every layer implements its own backward, which keeps
//! training bit-deterministic, lets the whole stack instantiate at f64 for
//! finite-difference gradient checks, and makes checkpoints a flat list of
//! named tensors.
//!
//! Conventions:
//! - feature maps are (batch, channels, height, width), row-major;
//! - `forward(.., train=true)` stores whatever the matching `backward` needs;
//!   with `train=false` no gradient state is kept;
//! - training owns a model mutably; concurrent inference clones the model per
//!   worker (parameters are a few MB).

pub mod adam;
pub mod blocks;
pub mod attention;
pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod linear;
pub mod norm;
pub mod ops;

use crate::tensor::{Scalar, Tensor};

pub use adam::AdamW;
pub use blocks::ResBlock;
pub use attention::CrossAttention;
pub use checkpoint::{load_named_tensors, save_named_tensors, CheckpointError};
pub use conv::Conv2d;
pub use linear::{Embedding, Linear};
pub use norm::GroupNorm;
pub use ops::{silu_backward, silu_forward, timestep_embedding, Upsample2x};

/// A learnable tensor and its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<S> {
    pub data: Tensor<S>,
    pub grad: Tensor<S>,
}

impl<S: Scalar> Param<S> {
    pub fn new(data: Tensor<S>) -> Self {
        let grad = Tensor::zeros(&data.shape);
        Param { data, grad }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Param::new(Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Parameter traversal in a fixed, construction-defined order. Optimizers,
/// checkpoints and gradient checks all key off the visited names.
pub trait Params<S: Scalar> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>));

    fn zero_grad(&mut self) {
        self.visit("", &mut |_, p| p.grad.fill(S::ZERO));
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| n += p.len());
        n
    }

    fn grads_all_finite(&mut self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, p| ok &= p.grad.all_finite());
        ok
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
