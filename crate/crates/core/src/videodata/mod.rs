//! Video clips, the binary clip container, captions, the synthetic
//! moving-shapes corpus and pixel-space reconstruction metrics.

mod captions;
mod clip;
mod metrics;
mod synth;

pub use captions::{CaptionCorpus, CaptionRecord, PosTag, TaggedWord};
pub use clip::{
    decode_container, denormalize, encode_container, load_clip, normalize, read_clip, save_clip,
    stack_clips, VideoClip, CONTAINER_MAGIC, CONTAINER_VERSION,
};
pub use metrics::{compute_metrics, MetricsReport, SSIM_WINDOW};
pub use synth::{corpus_captions, corpus_checksum, synthesize_corpus, MotionSpec, Speed, SyntheticClip};
