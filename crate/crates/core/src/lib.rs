//! Video tokenizer with decoupled spatial and temporal query compression and
//! a part-of-speech partitioned language codebook.
//!
//! The crate is organized by pipeline stage: [`videodata`] (clips, captions,
//! synthetic corpus, metrics), [`patchify`], [`dqae`] (the autoencoder),
//! [`mlc`] (codebook and quantizer) and [`training`].

pub mod config;
pub mod dqae;
pub mod error;
pub mod grid;
pub mod mlc;
pub mod nn;
pub mod patchify;
pub mod training;
pub mod videodata;

pub use candle_core::{DType, Device, Tensor};
pub use config::{DataConfig, LossWeights, ModelConfig, Preset, RunConfig, TrainConfig};
pub use dqae::{ClipTokens, SweetTok};
pub use error::{Error, Result};
pub use mlc::{Codebook, SubBook, Vocabulary};
pub use training::{Mode, Strategy, Tokenizer, Trainer};
pub use videodata::VideoClip;
