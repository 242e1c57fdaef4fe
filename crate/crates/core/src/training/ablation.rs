use candle_core::{DType, Tensor};

use super::baselines::{CoupledQuery, Downsample, Strategy};
use super::trainer::{reconstruction_l2, Mode, Tokenizer, Trainer};
use crate::config::{ModelConfig, TrainConfig};
use crate::dqae::SweetTok;
use crate::error::Result;
use crate::mlc::Codebook;

/// One trained strategy's final numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub strategy: Strategy,
    pub seed: u64,
    pub tokens: usize,
    pub steps: usize,
    /// Mean squared error of the clamped token round trip over the corpus.
    pub l2: f64,
    pub psnr: f64,
    /// Set when the token budget differs from the decoupled budget.
    pub budget_note: Option<String>,
}

pub const ABLATION_HEADER: &str = "strategy\tseed\ttokens\tsteps\tl2\tpsnr\tnote";

impl AblationRow {
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{:.6e}\t{:.4}\t{}",
            self.strategy,
            self.seed,
            self.tokens,
            self.steps,
            self.l2,
            self.psnr,
            self.budget_note.as_deref().unwrap_or("-")
        )
    }
}

pub fn format_ablation(rows: &[AblationRow]) -> String {
    let mut out = String::from(ABLATION_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_tsv());
        out.push('\n');
    }
    out
}

fn train_and_score<M: Tokenizer>(model: &M, clips: &[Tensor], cfg: &TrainConfig, steps: usize) -> Result<f64> {
    let mut trainer = Trainer::new(cfg, model.params())?;
    trainer.fit(model, clips, steps, Mode::Video, |_| {})?;
    reconstruction_l2(model, clips)
}

/// Trains each strategy from the same seed on the same clips for `steps`
/// updates and reports the final round-trip reconstruction error.
pub fn run_ablation(
    strategies: &[Strategy],
    clips: &[Tensor],
    codebook: &Codebook,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    steps: usize,
    seed: u64,
) -> Result<Vec<AblationRow>> {
    let model_cfg = ModelConfig {
        init_seed: seed,
        ..model_cfg.clone()
    };
    let train_cfg = TrainConfig {
        seed,
        total_steps: train_cfg.total_steps.max(steps),
        ..train_cfg.clone()
    };
    let reference = Strategy::DecoupledQuery.token_budget(&model_cfg);
    let mut rows = Vec::with_capacity(strategies.len());
    for &strategy in strategies {
        let cb = codebook.clone();
        let l2 = match strategy {
            Strategy::DecoupledQuery => {
                train_and_score(&SweetTok::new(&model_cfg, cb, DType::F32)?, clips, &train_cfg, steps)?
            }
            Strategy::CoupledQuery => {
                train_and_score(&CoupledQuery::new(&model_cfg, cb, DType::F32)?, clips, &train_cfg, steps)?
            }
            Strategy::Downsample => {
                train_and_score(&Downsample::new(&model_cfg, cb, DType::F32)?, clips, &train_cfg, steps)?
            }
        };
        let tokens = strategy.token_budget(&model_cfg);
        rows.push(AblationRow {
            strategy,
            seed,
            tokens,
            steps,
            l2,
            psnr: if l2 == 0.0 { f64::INFINITY } else { -10.0 * l2.log10() },
            budget_note: (tokens != reference).then(|| format!("budget {tokens} vs {reference}")),
        });
    }
    Ok(rows)
}
