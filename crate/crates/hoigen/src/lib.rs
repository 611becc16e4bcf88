//! Desk-scale customized human-object-interaction image generation.
//!
//! The crate builds a fully synthetic, analytically checkable HOI world and
//! trains a two-stage conditional diffusion pipeline on it:
//!
//! 1. a mask-diffusion stage generates a two-channel (human, object)
//!    foreground mask expressing a requested interaction verb, optionally
//!    constrained to a background region;
//! 2. a mask-guided image stage paints the referenced human and object
//!    identities into that spatial configuration, optionally compositing
//!    into a provided background.
//!
//! Because scene semantics come from geometric rules over rendered masks,
//! every stage has an in-repo oracle: dataset construction, training and the
//! evaluation metrics are all checkable without pretrained models.
//!
//! Entry points: [`synthworld`] (world + oracle), [`datasets`] (corpus
//! construction), [`diffusion`] (shared DDPM machinery), [`iamg`]
//! (interaction-aware mask generation), [`mgig`] (mask-guided image
//! generation), [`eval`] (metrics), [`app`] (configs, CLI commands,
//! experiment orchestration).

pub mod datasets;
pub mod app;
pub mod diffusion;
pub mod eval;
pub mod iamg;
pub mod mgig;
pub mod nn;
pub mod raster;
pub mod rng;
pub mod synthworld;
pub mod tensor;
