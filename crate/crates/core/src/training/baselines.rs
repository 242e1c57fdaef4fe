//! Comparison tokenizers sharing the patch kernel, codebook and training
//! contract of [`SweetTok`](crate::dqae::SweetTok): a coupled-query
//! autoencoder over one unpartitioned codebook, and a patch sequence
//! linearly interpolated down to the token budget and back.

use candle_core::{DType, Device, Tensor};

use super::trainer::{Mode, Tokenizer};
use crate::config::ModelConfig;
use crate::dqae::SelfBlock;
use crate::error::{Error, Result};
use crate::mlc::{embed_indices, quantize, Codebook, DecoderInput, GcnProjector, SubBook, VqTerms};
use crate::nn::{l2_normalize, LayerNorm, Linear, ParamStore, INIT_STD};
use crate::patchify::{unpatchify_spatial, unpatchify_temporal, GridKind, PatchGrid, PatchKernel};

/// Which compression scheme a tokenizer implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    DecoupledQuery,
    CoupledQuery,
    Downsample,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::DecoupledQuery, Strategy::CoupledQuery, Strategy::Downsample];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::DecoupledQuery => "decoupled_query",
            Strategy::CoupledQuery => "coupled_query",
            Strategy::Downsample => "downsample",
        }
    }

    /// Tokens per clip: the decoupled budget `L_s + L_t`, four fifths of it
    /// for the coupled baseline.
    pub fn token_budget(self, cfg: &ModelConfig) -> usize {
        let full = cfg.l_spatial + cfg.l_temporal;
        match self {
            Strategy::DecoupledQuery | Strategy::Downsample => full,
            Strategy::CoupledQuery => (full * 4 / 5).max(1),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::validation("strategy", format!("unknown strategy {s:?}")))
    }
}

/// Row-major `(n_out, n_in)` matrix of 1D linear interpolation with the
/// end points of both grids aligned.
pub fn interpolation_matrix(n_out: usize, n_in: usize) -> Vec<f64> {
    let mut m = vec![0.0; n_out * n_in];
    for i in 0..n_out {
        let pos = if n_out == 1 {
            0.0
        } else {
            i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
        };
        let lo = (pos.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        let frac = pos - lo as f64;
        m[i * n_in + lo] += 1.0 - frac;
        if hi != lo {
            m[i * n_in + hi] += frac;
        }
    }
    m
}

/// Patch kernel, codebook projector and pixel head shared by both baselines.
#[derive(Debug)]
struct PatchSequence {
    cfg: ModelConfig,
    kernel: PatchKernel,
    projector: GcnProjector,
    codebook: Codebook,
}

impl PatchSequence {
    fn new(ps: &mut ParamStore, cfg: &ModelConfig, codebook: Codebook) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            kernel: PatchKernel::new(ps, "patch", cfg)?,
            projector: GcnProjector::new(ps, "projector", cfg.d_text, cfg.gcn_hidden, cfg.d_latent)?,
            codebook: codebook.with_dtype(ps.dtype())?,
        })
    }

    fn len(&self) -> usize {
        (1 + self.cfg.grid_t()) * self.cfg.patches_per_frame()
    }

    /// Frame-1 patches followed by the tube patches, `(B, N, D)`.
    fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims();
        let want = [self.cfg.frames, self.cfg.height, self.cfg.width, 3];
        if dims.len() != 5 || dims[1..] != want {
            return Err(Error::shape(format!("expected (B, {want:?}) input, got {dims:?}")));
        }
        let t = dims[1];
        let v_s = self.kernel.with_spatial_pos(&self.kernel.embed_spatial(&x.narrow(1, 0, 1)?)?)?;
        let v_t = self
            .kernel
            .with_temporal_pos(&self.kernel.embed_temporal(&x.narrow(1, 1, t - 1)?)?)?;
        Ok(Tensor::cat(&[&v_s.tokens()?, &v_t.tokens()?], 1)?)
    }

    /// Inverse of [`Self::embed`]'s layout, unclamped pixels.
    fn unembed(&self, tokens: &Tensor) -> Result<Tensor> {
        let hw = self.cfg.patches_per_frame();
        let (h, w, t) = (self.cfg.grid_h(), self.cfg.grid_w(), self.cfg.grid_t());
        let s = PatchGrid::from_tokens(&tokens.narrow(1, 0, hw)?.contiguous()?, 1, h, w, GridKind::Spatial)?;
        let rest = PatchGrid::from_tokens(
            &tokens.narrow(1, hw, t * hw)?.contiguous()?,
            t,
            h,
            w,
            GridKind::Temporal,
        )?;
        Ok(Tensor::cat(
            &[&unpatchify_spatial(&s, &self.kernel)?, &unpatchify_temporal(&rest, &self.kernel)?],
            1,
        )?)
    }

    fn project(&self) -> Result<Tensor> {
        self.projector.forward(self.codebook.raw(), self.codebook.adjacency())
    }
}

fn blocks(ps: &mut ParamStore, name: &str, n: usize, cfg: &ModelConfig) -> Result<Vec<SelfBlock>> {
    (0..n)
        .map(|i| SelfBlock::new(ps, &format!("{name}.blocks.{i}"), cfg.d_model, cfg.n_heads, cfg.ff_hidden()))
        .collect()
}

fn run(blocks: &[SelfBlock], x: Tensor) -> Result<Tensor> {
    blocks.iter().try_fold(x, |x, b| b.forward(&x))
}

fn expand(t: &Tensor, batch: usize) -> Result<Tensor> {
    let (n, d) = t.dims2()?;
    Ok(t.unsqueeze(0)?.broadcast_as((batch, n, d))?.contiguous()?)
}

fn check_video(mode: Mode) -> Result<()> {
    if mode == Mode::Image {
        return Err(Error::validation("mode", "baselines train on video only"));
    }
    Ok(())
}

/// Joint self-attention over `[E || Q]`; the query half is quantized against
/// the whole codebook and decoded from `[E_Q || Z̃_Q]`.
#[derive(Debug)]
pub struct CoupledQuery {
    pub params: ParamStore,
    seq: PatchSequence,
    queries: Tensor,
    encoder: Vec<SelfBlock>,
    enc_norm: LayerNorm,
    enc_bridge: Linear,
    dec_bridge: Linear,
    patch_queries: Tensor,
    decoder: Vec<SelfBlock>,
    dec_norm: LayerNorm,
    head: Linear,
    budget: usize,
}

impl CoupledQuery {
    pub fn new(cfg: &ModelConfig, codebook: Codebook, dtype: DType) -> Result<Self> {
        let mut ps = ParamStore::new(cfg.init_seed, dtype);
        let seq = PatchSequence::new(&mut ps, cfg, codebook)?;
        let budget = Strategy::CoupledQuery.token_budget(cfg);
        let depth = cfg.spatial_layers + cfg.temporal_layers;
        let (d, lat) = (cfg.d_model, cfg.d_latent);
        let n = seq.len();
        Ok(Self {
            queries: ps.normal("queries.coupled", &[budget, d], INIT_STD)?,
            encoder: blocks(&mut ps, "encoder", depth, cfg)?,
            enc_norm: LayerNorm::new(&mut ps, "encoder.ln_out", d)?,
            enc_bridge: Linear::new(&mut ps, "encoder.bridge", d, lat)?,
            dec_bridge: Linear::new(&mut ps, "decoder.bridge", lat, d)?,
            patch_queries: ps.normal("queries.coupled_patch", &[n, d], INIT_STD)?,
            decoder: blocks(&mut ps, "decoder", depth, cfg)?,
            dec_norm: LayerNorm::new(&mut ps, "decoder.ln_out", d)?,
            head: Linear::new(&mut ps, "decoder.head", d, d)?,
            params: ps,
            seq,
            budget,
        })
    }

    fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let e = self.seq.embed(x)?;
        let (b, n, _) = e.dims3()?;
        let joint = Tensor::cat(&[&e, &expand(&self.queries, b)?], 1)?;
        let out = run(&self.encoder, joint)?.narrow(1, n, self.budget)?;
        l2_normalize(&self.enc_bridge.forward(&self.enc_norm.forward(&out)?)?)
    }

    fn decode(&self, zq: &Tensor) -> Result<Tensor> {
        let b = zq.dims()[0];
        let n = self.seq.len();
        let joint = Tensor::cat(&[&expand(&self.patch_queries, b)?, &self.dec_bridge.forward(zq)?], 1)?;
        let out = run(&self.decoder, joint)?.narrow(1, 0, n)?;
        self.seq.unembed(&self.head.forward(&self.dec_norm.forward(&out)?)?)
    }
}

impl Tokenizer for CoupledQuery {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn forward_losses(&self, x: &Tensor, beta: f64, mode: Mode, input: DecoderInput) -> Result<(Tensor, Tensor)> {
        check_video(mode)?;
        let projected = self.seq.project()?;
        let z = self.encode(x)?;
        let q = quantize(&z, &projected, self.seq.codebook.span(SubBook::Full), None)?;
        let recon = self.decode(&q.decoder_input(&z, input))?;
        Ok((recon, VqTerms::of(&z, &q)?.weighted(beta)?))
    }

    fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        let projected = self.seq.project()?;
        let z = self.encode(x)?;
        let q = quantize(&z, &projected, self.seq.codebook.span(SubBook::Full), None)?;
        let zq = embed_indices(&projected, &q.indices, z.dims()[0], self.budget)?;
        Ok(self.decode(&zq)?.clamp(-0.5, 0.5)?)
    }

    fn token_budget(&self) -> usize {
        self.budget
    }

    fn beta(&self) -> f64 {
        self.seq.cfg.beta
    }

    fn trainable(&self, _name: &str, mode: Mode) -> bool {
        mode == Mode::Video
    }
}

/// Full-sequence encoder, linear interpolation down to the token budget,
/// quantization, interpolation back up and a full-sequence decoder.
#[derive(Debug)]
pub struct Downsample {
    pub params: ParamStore,
    seq: PatchSequence,
    encoder: Vec<SelfBlock>,
    enc_norm: LayerNorm,
    enc_bridge: Linear,
    dec_bridge: Linear,
    decoder: Vec<SelfBlock>,
    dec_norm: LayerNorm,
    head: Linear,
    down: Tensor,
    up: Tensor,
    budget: usize,
}

impl Downsample {
    pub fn new(cfg: &ModelConfig, codebook: Codebook, dtype: DType) -> Result<Self> {
        let mut ps = ParamStore::new(cfg.init_seed, dtype);
        let seq = PatchSequence::new(&mut ps, cfg, codebook)?;
        let budget = Strategy::Downsample.token_budget(cfg);
        let depth = cfg.spatial_layers + cfg.temporal_layers;
        let (d, lat, n) = (cfg.d_model, cfg.d_latent, seq.len());
        let matrix = |rows, cols| -> Result<Tensor> {
            Ok(Tensor::from_vec(interpolation_matrix(rows, cols), (rows, cols), &Device::Cpu)?.to_dtype(dtype)?)
        };
        Ok(Self {
            encoder: blocks(&mut ps, "encoder", depth, cfg)?,
            enc_norm: LayerNorm::new(&mut ps, "encoder.ln_out", d)?,
            enc_bridge: Linear::new(&mut ps, "encoder.bridge", d, lat)?,
            dec_bridge: Linear::new(&mut ps, "decoder.bridge", lat, d)?,
            decoder: blocks(&mut ps, "decoder", depth, cfg)?,
            dec_norm: LayerNorm::new(&mut ps, "decoder.ln_out", d)?,
            head: Linear::new(&mut ps, "decoder.head", d, d)?,
            down: matrix(budget, n)?,
            up: matrix(n, budget)?,
            params: ps,
            seq,
            budget,
        })
    }

    fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let e = run(&self.encoder, self.seq.embed(x)?)?;
        let z = self.enc_bridge.forward(&self.enc_norm.forward(&e)?)?;
        l2_normalize(&self.down.broadcast_matmul(&z)?)
    }

    fn decode(&self, zq: &Tensor) -> Result<Tensor> {
        let up = self.up.broadcast_matmul(zq)?;
        let y = run(&self.decoder, self.dec_bridge.forward(&up)?)?;
        self.seq.unembed(&self.head.forward(&self.dec_norm.forward(&y)?)?)
    }
}

impl Tokenizer for Downsample {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn forward_losses(&self, x: &Tensor, beta: f64, mode: Mode, input: DecoderInput) -> Result<(Tensor, Tensor)> {
        check_video(mode)?;
        let projected = self.seq.project()?;
        let z = self.encode(x)?;
        let q = quantize(&z, &projected, self.seq.codebook.span(SubBook::Full), None)?;
        let recon = self.decode(&q.decoder_input(&z, input))?;
        Ok((recon, VqTerms::of(&z, &q)?.weighted(beta)?))
    }

    fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        let projected = self.seq.project()?;
        let z = self.encode(x)?;
        let q = quantize(&z, &projected, self.seq.codebook.span(SubBook::Full), None)?;
        let zq = embed_indices(&projected, &q.indices, z.dims()[0], self.budget)?;
        Ok(self.decode(&zq)?.clamp(-0.5, 0.5)?)
    }

    fn token_budget(&self) -> usize {
        self.budget
    }

    fn beta(&self) -> f64 {
        self.seq.cfg.beta
    }

    fn trainable(&self, _name: &str, mode: Mode) -> bool {
        mode == Mode::Video
    }
}
