use std::collections::BTreeMap;

use candle_core::{DType, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::ema::Ema;
use super::optim::AdamW;
use super::schedule::lr_at;
use crate::config::TrainConfig;
use crate::dqae::{is_temporal_param, SweetTok};
use crate::error::{Error, Result};
use crate::mlc::DecoderInput;
use crate::nn::{mse, scalar, ParamStore};

/// Whether a step trains on whole clips or on first frames only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Video,
    /// Spatial branch only; temporal parameters are never touched.
    Image,
}

/// The training contract shared by the tokenizer and its ablation baselines.
pub trait Tokenizer {
    fn params(&self) -> &ParamStore;

    /// Unclamped reconstruction and commitment loss for a `(B, T, H, W, 3)` batch
    /// (`(B, 1, H, W, 3)` in image mode).
    fn forward_losses(&self, x: &Tensor, beta: f64, mode: Mode, input: DecoderInput) -> Result<(Tensor, Tensor)>;

    /// Clamped token round trip of one clip `(1, T, H, W, 3)`.
    fn reconstruct(&self, x: &Tensor) -> Result<Tensor>;

    /// Discrete tokens emitted per clip.
    fn token_budget(&self) -> usize;

    fn beta(&self) -> f64;

    /// Whether `name` may be updated in `mode`.
    fn trainable(&self, name: &str, mode: Mode) -> bool {
        mode == Mode::Video || !is_temporal_param(name)
    }
}

impl Tokenizer for SweetTok {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn forward_losses(&self, x: &Tensor, beta: f64, mode: Mode, input: DecoderInput) -> Result<(Tensor, Tensor)> {
        let pass = match mode {
            Mode::Video => self.forward_with(x, None, input)?,
            Mode::Image => self.forward_image_with(x, None, input)?,
        };
        Ok((pass.recon.clone(), pass.vq_loss(beta)?))
    }

    fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        SweetTok::reconstruct(self, x)
    }

    fn token_budget(&self) -> usize {
        self.cfg.l_spatial + self.cfg.l_temporal
    }

    fn beta(&self) -> f64 {
        self.cfg.beta
    }
}

/// Extra reconstruction terms computed from `(x, x̃)`; zero unless supplied.
pub type LossHook = Box<dyn Fn(&Tensor, &Tensor) -> Result<Tensor>>;

#[derive(Default)]
pub struct LossHooks {
    pub perceptual: Option<LossHook>,
    pub adversarial: Option<LossHook>,
}

impl std::fmt::Debug for LossHooks {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LossHooks")
            .field("perceptual", &self.perceptual.is_some())
            .field("adversarial", &self.adversarial.is_some())
            .finish()
    }
}

/// Per-step loss terms (unweighted) and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub step: usize,
    pub lr: f64,
    pub l2: f64,
    pub vq: f64,
    pub perceptual: f64,
    pub adversarial: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// `step<TAB>lr<TAB>l2<TAB>vq<TAB>total`.
    pub fn log_line(&self) -> String {
        format!("{}\t{:e}\t{:e}\t{:e}\t{:e}", self.step, self.lr, self.l2, self.vq, self.total)
    }
}

/// Optimizer, EMA shadow, schedule position and batch sampler.
#[derive(Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub opt: AdamW,
    pub ema: Ema,
    pub step: usize,
    pub hooks: LossHooks,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig, params: &ParamStore) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            opt: AdamW::new(cfg),
            ema: Ema::new(params, cfg.ema_decay)?,
            step: 0,
            hooks: LossHooks::default(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        })
    }

    /// Indices of the next batch, drawn with replacement.
    pub fn sample_batch(&mut self, n: usize) -> Vec<usize> {
        (0..self.cfg.batch_size).map(|_| self.rng.random_range(0..n)).collect()
    }

    fn term(hook: &Option<LossHook>, weight: f64, x: &Tensor, recon: &Tensor) -> Result<Option<Tensor>> {
        match hook {
            Some(h) if weight != 0.0 => Ok(Some(h(x, recon)?)),
            _ => Ok(None),
        }
    }

    /// Loss terms for one batch without updating anything.
    pub fn evaluate<M: Tokenizer>(&self, model: &M, batch: &Tensor, mode: Mode) -> Result<(LossBreakdown, Tensor)> {
        let x = batch.to_dtype(model.params().dtype())?;
        let (beta, input) = match self.step < self.cfg.quantizer_warmup {
            true => (0.0, DecoderInput::Continuous),
            false => (model.beta(), DecoderInput::Quantized),
        };
        let (recon, vq) = model.forward_losses(&x, beta, mode, input)?;
        let l2 = mse(&recon, &x)?;
        let w = &self.cfg.loss_weights;
        let mut total = ((&l2 * w.l2)? + (&vq * w.vq)?)?;
        let perceptual = Self::term(&self.hooks.perceptual, w.perceptual, &x, &recon)?;
        let adversarial = Self::term(&self.hooks.adversarial, w.adversarial, &x, &recon)?;
        if let Some(p) = &perceptual {
            total = (total + (p * w.perceptual)?)?;
        }
        if let Some(a) = &adversarial {
            total = (total + (a * w.adversarial)?)?;
        }
        let (l2v, vqv) = (scalar(&l2)?, scalar(&vq)?);
        let pv = perceptual.as_ref().map(scalar).transpose()?.unwrap_or(0.0);
        let av = adversarial.as_ref().map(scalar).transpose()?.unwrap_or(0.0);
        let report = LossBreakdown {
            step: self.step,
            lr: 0.0,
            l2: l2v,
            vq: vqv,
            perceptual: pv,
            adversarial: av,
            total: w.l2 * l2v + w.vq * vqv + w.perceptual * pv + w.adversarial * av,
        };
        Ok((report, total))
    }

    /// One optimizer update on `batch`; aborts before touching any weight if a loss is non-finite.
    pub fn train_step<M: Tokenizer>(&mut self, model: &M, batch: &Tensor, mode: Mode) -> Result<LossBreakdown> {
        let lr = lr_at((self.step + 1).min(self.cfg.total_steps), &self.cfg)?;
        let (mut report, total) = self.evaluate(model, batch, mode)?;
        report.lr = lr;
        if ![report.l2, report.vq, report.perceptual, report.adversarial, report.total]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::NonFinite(format!("{report:?}")));
        }
        let grads = total.backward()?;
        self.opt.step(model.params(), &grads, lr, |n| model.trainable(n, mode))?;
        self.ema.update(model.params())?;
        self.step += 1;
        Ok(report)
    }

    /// Runs `steps` updates sampling batches from `clips` (each `(1, T, H, W, 3)`).
    pub fn fit<M: Tokenizer>(
        &mut self,
        model: &M,
        clips: &[Tensor],
        steps: usize,
        mode: Mode,
        mut on_step: impl FnMut(&LossBreakdown),
    ) -> Result<Vec<LossBreakdown>> {
        if clips.is_empty() {
            return Err(Error::validation("data", "no training clips"));
        }
        let mut log = Vec::with_capacity(steps);
        for _ in 0..steps {
            let idx = self.sample_batch(clips.len());
            let parts: Vec<&Tensor> = idx.iter().map(|&i| &clips[i]).collect();
            let batch = Tensor::cat(&parts, 0)?;
            let report = self.train_step(model, &batch, mode)?;
            on_step(&report);
            log.push(report);
        }
        Ok(log)
    }

    /// Trainer state plus model parameters, ready to extend with config blobs.
    pub fn checkpoint(&self, params: &ParamStore) -> Result<Checkpoint> {
        let mut ck = Checkpoint::default();
        for (name, var) in params.iter() {
            ck.tensors.insert(format!("param/{name}"), var.as_tensor().clone());
        }
        for (name, t) in &self.opt.m {
            ck.tensors.insert(format!("adam.m/{name}"), t.clone());
        }
        for (name, t) in &self.opt.v {
            ck.tensors.insert(format!("adam.v/{name}"), t.clone());
        }
        for (name, &t) in &self.opt.t {
            ck.counters.insert(format!("adam.t/{name}"), t);
        }
        for (name, t) in &self.ema.shadow {
            ck.tensors.insert(format!("ema/{name}"), t.clone());
        }
        ck.counters.insert("step".into(), self.step as u64);
        ck.blobs.insert("rng.seed".into(), self.rng.get_seed().to_vec());
        ck.blobs.insert("rng.word_pos".into(), self.rng.get_word_pos().to_le_bytes().to_vec());
        Ok(ck)
    }

    /// Restores parameters and trainer state written by [`Trainer::checkpoint`].
    pub fn restore(&mut self, ck: &Checkpoint, params: &ParamStore) -> Result<()> {
        let dtype = params.dtype();
        let cast = |m: BTreeMap<String, Tensor>| -> Result<BTreeMap<String, Tensor>> {
            m.into_iter()
                .map(|(k, v)| Ok((k, v.to_dtype(dtype)?)))
                .collect()
        };
        params.restore(&cast(ck.tensors_with_prefix("param/"))?)?;
        self.opt.m = cast(ck.tensors_with_prefix("adam.m/"))?;
        self.opt.v = cast(ck.tensors_with_prefix("adam.v/"))?;
        self.opt.t = ck.counters_with_prefix("adam.t/");
        let shadow = cast(ck.tensors_with_prefix("ema/"))?;
        if shadow.len() != params.len() {
            return Err(Error::format("checkpoint", "EMA shadow does not match the model"));
        }
        self.ema.shadow = shadow;
        self.step = ck.counter("step")? as usize;
        let seed: [u8; 32] = ck
            .blob("rng.seed")?
            .try_into()
            .map_err(|_| Error::format("checkpoint", "bad rng seed"))?;
        let pos: [u8; 16] = ck
            .blob("rng.word_pos")?
            .try_into()
            .map_err(|_| Error::format("checkpoint", "bad rng position"))?;
        self.rng = ChaCha8Rng::from_seed(seed);
        self.rng.set_word_pos(u128::from_le_bytes(pos));
        Ok(())
    }

    /// Copies the EMA shadow into `params` (for evaluation snapshots).
    pub fn load_ema_into(&self, params: &ParamStore) -> Result<()> {
        params.restore(&self.ema.shadow)
    }
}

/// Mean squared error of clamped round-trip reconstructions over `clips`.
pub fn reconstruction_l2<M: Tokenizer>(model: &M, clips: &[Tensor]) -> Result<f64> {
    let mut sum = 0.0;
    for clip in clips {
        let x = clip.to_dtype(DType::F32)?;
        let recon = model.reconstruct(&clip.to_dtype(model.params().dtype())?)?.to_dtype(DType::F32)?;
        sum += scalar(&mse(&recon, &x)?)?;
    }
    Ok(sum / clips.len().max(1) as f64)
}
