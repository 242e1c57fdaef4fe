//! Optimization: schedule, AdamW, EMA, checkpoints, the training loop with
//! its image-only mode, and the ablation baselines.

mod ablation;
mod baselines;
mod checkpoint;
mod ema;
mod optim;
mod schedule;
mod trainer;

pub use ablation::{format_ablation, run_ablation, AblationRow, ABLATION_HEADER};
pub use baselines::{interpolation_matrix, CoupledQuery, Downsample, Strategy};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use ema::{ema_update, Ema};
pub use optim::AdamW;
pub use schedule::lr_at;
pub use trainer::{reconstruction_l2, LossBreakdown, LossHook, LossHooks, Mode, Tokenizer, Trainer};
