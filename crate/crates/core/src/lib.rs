//! Debiased feature augmentation for compositional zero-shot learning on
//! precomputed image embeddings.
//!
//! The crate is organised bottom-up: [`numerics`] provides matrices, a small
//! reverse-mode tape and MLPs; [`domain`] the label spaces; [`encoders`] the
//! visual and text paths; [`augment`] the fusion network, augmentation losses
//! and debias weights; [`pipeline`] the full model, optimizer, training loop
//! and checkpoints; [`config`] run settings and presets; [`eval`] the
//! calibration sweep; [`io`] the file formats.

pub mod augment;
pub mod config;
pub mod domain;
pub mod encoders;
pub mod eval;
pub mod io;
pub mod numerics;
pub mod pipeline;
