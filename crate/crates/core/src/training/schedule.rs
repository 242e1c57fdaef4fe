use crate::config::TrainConfig;
use crate::error::{Error, Result};

/// Linear warmup from 0 to `max_lr`, then cosine decay to `min_lr` at `total_steps`.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> Result<f64> {
    if step > cfg.total_steps {
        return Err(Error::validation(
            "step",
            format!("{step} is past total_steps={}", cfg.total_steps),
        ));
    }
    if step < cfg.warmup_steps {
        return Ok(cfg.max_lr * step as f64 / cfg.warmup_steps as f64);
    }
    let span = cfg.total_steps - cfg.warmup_steps;
    if span == 0 {
        return Ok(cfg.max_lr);
    }
    let progress = (step - cfg.warmup_steps) as f64 / span as f64;
    Ok(cfg.min_lr + 0.5 * (cfg.max_lr - cfg.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos()))
}
