//! Dual-path transformer for hand-gesture recognition from sparse
//! multichannel surface EMG.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`]: dense tensors, a reverse-mode tape, Adam, and checkpoints.
//! - [`preprocess`]: Butterworth filter bank, μ-law normalization and
//!   sliding-window segmentation.
//! - [`dataset`]: the canonical `EMG1` container, repetition-based splits and
//!   a deterministic synthetic generator.
//! - [`embedding`], [`encoder`], [`model`]: patching, the pre-norm encoder and
//!   the TNet / FNet / hybrid heads.
//! - [`harness`]: per-subject training, evaluation, Wilcoxon statistics,
//!   positional-embedding similarity and report rendering.

pub mod dataset;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod kv;
pub mod layers;
pub mod model;
pub mod preprocess;
pub mod tensor;

pub use error::{Error, Result};

pub use embedding::{PatchScheme, PathKind};
pub use model::{HeadKind, LossMode, Model, ModelConfig, Variant};
pub use tensor::{Float, Graph, ParamId, ParamSet, Tensor, Var};
