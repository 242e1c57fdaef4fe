use candle_core::{DType, Tensor};

use super::block::{Layout, QueryDecoder, QueryEncoder};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::mlc::{embed_indices, quantize, Codebook, DecoderInput, FrozenStream, GcnProjector, Quantized, SubBook, VqTerms};
use crate::nn::{ParamStore, INIT_STD};
use crate::patchify::{unpatchify_spatial, unpatchify_temporal, GridKind, PatchGrid, PatchKernel};

/// Learnable query embeddings: `Q_s (L_s, D)`, `Q_t (L_t, D)` and the
/// spatial patch queries `Q_vs (hw, D)`.
#[derive(Debug, Clone)]
pub struct QueryBank {
    pub spatial: Tensor,
    pub temporal: Tensor,
    pub spatial_patch: Tensor,
}

impl QueryBank {
    fn new(ps: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Self {
            spatial: ps.normal("queries.spatial", &[cfg.l_spatial, d], INIT_STD)?,
            temporal: ps.normal("queries.temporal", &[cfg.l_temporal, d], INIT_STD)?,
            spatial_patch: ps.normal("queries.spatial_patch", &[cfg.patches_per_frame(), d], INIT_STD)?,
        })
    }
}

/// Code assignments to hold fixed while probing the loss surface.
#[derive(Debug, Clone)]
pub struct FrozenCodes {
    pub spatial: FrozenStream,
    pub temporal: Option<FrozenStream>,
}

/// Everything a training step needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Unclamped reconstruction, same shape as the input.
    pub recon: Tensor,
    pub z_s: Tensor,
    pub q_s: Quantized,
    /// Absent in image mode.
    pub z_t: Option<Tensor>,
    pub q_t: Option<Quantized>,
    /// Decoded reference-frame grid `ṽ_s`.
    pub v_s_tilde: PatchGrid,
}

impl ForwardPass {
    pub fn frozen(&self) -> Result<FrozenCodes> {
        Ok(FrozenCodes {
            spatial: self.q_s.freeze()?,
            temporal: self.q_t.as_ref().map(|q| q.freeze()).transpose()?,
        })
    }

    /// Commitment loss summed over the streams present.
    pub fn vq_loss(&self, beta: f64) -> Result<Tensor> {
        let mut loss = VqTerms::of(&self.z_s, &self.q_s)?.weighted(beta)?;
        if let (Some(z), Some(q)) = (&self.z_t, &self.q_t) {
            loss = (loss + VqTerms::of(z, q)?.weighted(beta)?)?;
        }
        Ok(loss)
    }
}

/// Per-clip token indices, local to each sub-book.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipTokens {
    pub spatial: Vec<u32>,
    pub temporal: Vec<u32>,
}

impl ClipTokens {
    pub fn len(&self) -> usize {
        self.spatial.len() + self.temporal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The decoupled query autoencoder with its language-codebook quantizer.
///
/// Parameters whose names contain `temporal` belong to the temporal branch;
/// everything else (patch kernel for frame 1, spatial encoder/decoder,
/// spatial queries, codebook projector) serves the spatial branch.
#[derive(Debug)]
pub struct SweetTok {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    pub codebook: Codebook,
    pub kernel: PatchKernel,
    pub queries: QueryBank,
    spatial_encoder: QueryEncoder,
    temporal_encoder: QueryEncoder,
    spatial_decoder: QueryDecoder,
    temporal_decoder: QueryDecoder,
    projector: GcnProjector,
}

impl SweetTok {
    pub fn new(cfg: &ModelConfig, codebook: Codebook, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        if codebook.d_text() != cfg.d_text {
            return Err(Error::validation(
                "model.d_text",
                format!("codebook embeddings are {}-d, config says {}", codebook.d_text(), cfg.d_text),
            ));
        }
        let codebook = codebook.with_dtype(dtype)?;
        Self::build(cfg, codebook, ParamStore::new(cfg.init_seed, dtype))
    }

    fn build(cfg: &ModelConfig, codebook: Codebook, mut ps: ParamStore) -> Result<Self> {
        let (d, heads, ff, lat) = (cfg.d_model, cfg.n_heads, cfg.ff_hidden(), cfg.d_latent);
        let kernel = PatchKernel::new(&mut ps, "patch", cfg)?;
        let queries = QueryBank::new(&mut ps, cfg)?;
        let spatial_encoder = QueryEncoder::new(&mut ps, "spatial_encoder", cfg.spatial_layers, d, heads, ff, lat)?;
        let temporal_encoder = QueryEncoder::new(&mut ps, "temporal_encoder", cfg.temporal_layers, d, heads, ff, lat)?;
        let spatial_decoder =
            QueryDecoder::new(&mut ps, "spatial_decoder", cfg.spatial_layers, d, heads, ff, lat, None)?;
        let temporal_tokens = cfg.grid_t() * cfg.patches_per_frame();
        let temporal_decoder = QueryDecoder::new(
            &mut ps,
            "temporal_decoder",
            cfg.temporal_layers,
            d,
            heads,
            ff,
            lat,
            Some(temporal_tokens),
        )?;
        let projector = GcnProjector::new(&mut ps, "projector", cfg.d_text, cfg.gcn_hidden, lat)?;
        Ok(Self {
            cfg: cfg.clone(),
            params: ps,
            codebook,
            kernel,
            queries,
            spatial_encoder,
            temporal_encoder,
            spatial_decoder,
            temporal_decoder,
            projector,
        })
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    /// A twin sharing these weights whose passes record no autograd graph.
    /// Inference goes through it so activations are freed layer by layer.
    pub fn detached(&self) -> Result<Self> {
        Self::build(&self.cfg, self.codebook.clone(), self.params.detached_view())
    }

    fn spatial_layout(&self) -> Layout {
        Layout::Spatial {
            t: 1,
            hw: self.cfg.patches_per_frame(),
        }
    }

    fn temporal_layout(&self) -> Layout {
        Layout::Temporal {
            t: self.cfg.grid_t(),
            hw: self.cfg.patches_per_frame(),
        }
    }

    /// `F(C)`: every vocabulary entry in the latent space, `(L_c, d_latent)`.
    pub fn project_codebook(&self) -> Result<Tensor> {
        self.projector.forward(self.codebook.raw(), self.codebook.adjacency())
    }

    fn check_input(&self, x: &Tensor, frames: usize) -> Result<usize> {
        let dims = x.dims();
        let want = [frames, self.cfg.height, self.cfg.width, 3];
        if dims.len() != 5 || dims[1..] != want {
            return Err(Error::shape(format!(
                "expected (B, {}, {}, {}, 3) input, got {dims:?}",
                frames, self.cfg.height, self.cfg.width
            )));
        }
        Ok(dims[0])
    }

    /// Frame 1 and the remaining frames of a `(B, T, H, W, 3)` batch.
    pub fn split_frames(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let t = x.dims()[1];
        Ok((x.narrow(1, 0, 1)?, x.narrow(1, 1, t - 1)?))
    }

    /// `Δv[τ, i, j] = v_s[0, i, j] - v_t[τ, i, j]`.
    pub fn compute_residual(v_s: &Tensor, v_t: &Tensor) -> Result<Tensor> {
        let (bs, one, hs, ws, ds) = v_s.dims5()?;
        let (bt, _, ht, wt, dt) = v_t.dims5()?;
        if one != 1 || (bs, hs, ws, ds) != (bt, ht, wt, dt) {
            return Err(Error::shape(format!(
                "residual needs matching grids, got {:?} and {:?}",
                v_s.dims(),
                v_t.dims()
            )));
        }
        Ok(v_t.broadcast_sub(v_s)?.neg()?)
    }

    /// `Z_Qs = E_s(Q_s, v_s)`, `(B, L_s, d_latent)`.
    pub fn encode_spatial(&self, v_s: &PatchGrid) -> Result<Tensor> {
        if v_s.kind != GridKind::Spatial {
            return Err(Error::shape("spatial encoder needs a spatial grid"));
        }
        self.spatial_encoder
            .forward(&v_s.tokens()?, &self.queries.spatial, self.spatial_layout())
    }

    /// `Z_Qt = E_t(Q_t, Δv)`, `(B, L_t, d_latent)`.
    pub fn encode_temporal(&self, delta_v: &PatchGrid) -> Result<Tensor> {
        if delta_v.kind != GridKind::Temporal {
            return Err(Error::shape("temporal encoder needs a temporal grid"));
        }
        self.temporal_encoder
            .forward(&delta_v.tokens()?, &self.queries.temporal, self.temporal_layout())
    }

    /// `ṽ_s = D_s(Q_vs, Z̃_Qs)`.
    pub fn decode_spatial(&self, zq_s: &Tensor) -> Result<PatchGrid> {
        let (b, l, _) = zq_s.dims3()?;
        if l != self.cfg.l_spatial {
            return Err(Error::shape(format!("expected {} spatial tokens, got {l}", self.cfg.l_spatial)));
        }
        let (hw, d) = self.queries.spatial_patch.dims2()?;
        let stream = self
            .queries
            .spatial_patch
            .unsqueeze(0)?
            .broadcast_as((b, hw, d))?
            .contiguous()?;
        let out = self.spatial_decoder.forward(&stream, zq_s, self.spatial_layout())?;
        PatchGrid::from_tokens(&out, 1, self.cfg.grid_h(), self.cfg.grid_w(), GridKind::Spatial)
    }

    /// `ṽ_s` repeated `t'` times along time: the temporal decoder's input stream.
    pub fn tile(&self, v_s_tilde: &PatchGrid) -> Result<Tensor> {
        let (b, _, h, w, d) = v_s_tilde.dims();
        let t = self.cfg.grid_t();
        Ok(v_s_tilde
            .data
            .broadcast_as((b, t, h, w, d))?
            .contiguous()?
            .reshape((b, t * h * w, d))?)
    }

    /// `ṽ = D_t([ṽ_s || ... || ṽ_s], Z̃_Qt)`, `(B, t', h, w, D)`.
    pub fn decode_temporal(&self, v_s_tilde: &PatchGrid, zq_t: &Tensor) -> Result<PatchGrid> {
        let (_, l, _) = zq_t.dims3()?;
        if l != self.cfg.l_temporal {
            return Err(Error::shape(format!("expected {} temporal tokens, got {l}", self.cfg.l_temporal)));
        }
        let stream = self.tile(v_s_tilde)?;
        let out = self.temporal_decoder.forward(&stream, zq_t, self.temporal_layout())?;
        let cfg = &self.cfg;
        PatchGrid::from_tokens(&out, cfg.grid_t(), cfg.grid_h(), cfg.grid_w(), GridKind::Temporal)
    }

    /// Frame 1 from `ṽ_s`, frames `2..T` from `ṽ`; unclamped.
    pub fn pixel_decode_raw(&self, v_s_tilde: &PatchGrid, v_tilde: &PatchGrid) -> Result<Tensor> {
        let first = unpatchify_spatial(v_s_tilde, &self.kernel)?;
        let rest = unpatchify_temporal(v_tilde, &self.kernel)?;
        Ok(Tensor::cat(&[&first, &rest], 1)?)
    }

    /// Pixel decoding clamped to the normalized range.
    pub fn pixel_decode(&self, v_s_tilde: &PatchGrid, v_tilde: &PatchGrid) -> Result<Tensor> {
        Ok(self.pixel_decode_raw(v_s_tilde, v_tilde)?.clamp(-0.5, 0.5)?)
    }

    fn frozen_spatial<'a>(&self, frozen: Option<&'a FrozenCodes>) -> Option<&'a FrozenStream> {
        frozen.map(|f| &f.spatial)
    }

    /// Full training-mode pass over a `(B, T, H, W, 3)` batch.
    pub fn forward(&self, x: &Tensor, frozen: Option<&FrozenCodes>) -> Result<ForwardPass> {
        self.forward_with(x, frozen, DecoderInput::Quantized)
    }

    pub fn forward_with(&self, x: &Tensor, frozen: Option<&FrozenCodes>, input: DecoderInput) -> Result<ForwardPass> {
        self.check_input(x, self.cfg.frames)?;
        let projected = self.project_codebook()?;
        let (x1, rest) = self.split_frames(x)?;
        let content_s = self.kernel.embed_spatial(&x1)?;
        let content_t = self.kernel.embed_temporal(&rest)?;
        let v_s = self.kernel.with_spatial_pos(&content_s)?;
        let delta = self
            .kernel
            .with_temporal_pos(&Self::compute_residual(&content_s, &content_t)?)?;

        let z_s = self.encode_spatial(&v_s)?;
        let q_s = quantize(
            &z_s,
            &projected,
            self.codebook.span(SubBook::Spatial),
            self.frozen_spatial(frozen),
        )?;
        let z_t = self.encode_temporal(&delta)?;
        let q_t = quantize(
            &z_t,
            &projected,
            self.codebook.span(SubBook::Temporal),
            frozen.and_then(|f| f.temporal.as_ref()),
        )?;

        let v_s_tilde = self.decode_spatial(&q_s.decoder_input(&z_s, input))?;
        let v_tilde = self.decode_temporal(&v_s_tilde, &q_t.decoder_input(&z_t, input))?;
        let recon = self.pixel_decode_raw(&v_s_tilde, &v_tilde)?;
        Ok(ForwardPass {
            recon,
            z_s,
            q_s,
            z_t: Some(z_t),
            q_t: Some(q_t),
            v_s_tilde,
        })
    }

    /// Spatial-branch-only pass over `(B, 1, H, W, 3)` images.
    pub fn forward_image(&self, x: &Tensor, frozen: Option<&FrozenCodes>) -> Result<ForwardPass> {
        self.forward_image_with(x, frozen, DecoderInput::Quantized)
    }

    pub fn forward_image_with(&self, x: &Tensor, frozen: Option<&FrozenCodes>, input: DecoderInput) -> Result<ForwardPass> {
        if x.rank() == 5 && x.dims()[1] != 1 {
            return Err(Error::validation("frames", format!("image mode takes one frame, got {}", x.dims()[1])));
        }
        self.check_input(x, 1)?;
        let projected = self.project_codebook()?;
        let v_s = self.kernel.with_spatial_pos(&self.kernel.embed_spatial(x)?)?;
        let z_s = self.encode_spatial(&v_s)?;
        let q_s = quantize(
            &z_s,
            &projected,
            self.codebook.span(SubBook::Spatial),
            self.frozen_spatial(frozen),
        )?;
        let v_s_tilde = self.decode_spatial(&q_s.decoder_input(&z_s, input))?;
        let recon = unpatchify_spatial(&v_s_tilde, &self.kernel)?;
        Ok(ForwardPass {
            recon,
            z_s,
            q_s,
            z_t: None,
            q_t: None,
            v_s_tilde,
        })
    }

    fn to_local(&self, book: SubBook, global: &[u32]) -> Result<Vec<u32>> {
        global.iter().map(|&g| self.codebook.to_local(book, g)).collect()
    }

    fn to_global(&self, book: SubBook, local: &[u32]) -> Result<Vec<u32>> {
        local.iter().map(|&l| self.codebook.to_global(book, l)).collect()
    }

    /// Discrete tokens for one clip `(1, T, H, W, 3)` or `(T, H, W, 3)`.
    pub fn tokenize(&self, x: &Tensor) -> Result<ClipTokens> {
        if !self.params.is_view() {
            return self.detached()?.tokenize(x);
        }
        let x = if x.rank() == 4 { x.unsqueeze(0)? } else { x.clone() };
        let b = self.check_input(&x, self.cfg.frames)?;
        if b != 1 {
            return Err(Error::shape(format!("tokenize takes one clip, got a batch of {b}")));
        }
        let x = x.to_dtype(self.dtype())?;
        let pass = self.forward(&x, None)?;
        Ok(ClipTokens {
            spatial: self.to_local(SubBook::Spatial, &pass.q_s.indices)?,
            temporal: self.to_local(SubBook::Temporal, &pass.q_t.expect("video pass").indices)?,
        })
    }

    /// Clip `(1, T, H, W, 3)` regenerated from its tokens alone, clamped.
    pub fn decode_indices(&self, tokens: &ClipTokens) -> Result<Tensor> {
        if !self.params.is_view() {
            return self.detached()?.decode_indices(tokens);
        }
        if tokens.spatial.len() != self.cfg.l_spatial || tokens.temporal.len() != self.cfg.l_temporal {
            return Err(Error::validation(
                "tokens",
                format!(
                    "expected {}+{} indices, got {}+{}",
                    self.cfg.l_spatial,
                    self.cfg.l_temporal,
                    tokens.spatial.len(),
                    tokens.temporal.len()
                ),
            ));
        }
        let projected = self.project_codebook()?;
        let s = self.to_global(SubBook::Spatial, &tokens.spatial)?;
        let t = self.to_global(SubBook::Temporal, &tokens.temporal)?;
        let zq_s = embed_indices(&projected, &s, 1, s.len())?;
        let zq_t = embed_indices(&projected, &t, 1, t.len())?;
        let v_s_tilde = self.decode_spatial(&zq_s)?;
        let v_tilde = self.decode_temporal(&v_s_tilde, &zq_t)?;
        self.pixel_decode(&v_s_tilde, &v_tilde)
    }

    /// `decode_indices(tokenize(x))`.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.decode_indices(&self.tokenize(x)?)
    }

    /// Spatial sub-book indices of one image `(1, 1, H, W, 3)`.
    pub fn encode_image(&self, x: &Tensor) -> Result<Vec<u32>> {
        if !self.params.is_view() {
            return self.detached()?.encode_image(x);
        }
        let x = x.to_dtype(self.dtype())?;
        let pass = self.forward_image(&x, None)?;
        self.to_local(SubBook::Spatial, &pass.q_s.indices)
    }

    pub fn decode_image(&self, spatial: &[u32]) -> Result<Tensor> {
        if !self.params.is_view() {
            return self.detached()?.decode_image(spatial);
        }
        if spatial.len() != self.cfg.l_spatial {
            return Err(Error::validation(
                "tokens",
                format!("expected {} spatial indices, got {}", self.cfg.l_spatial, spatial.len()),
            ));
        }
        let projected = self.project_codebook()?;
        let s = self.to_global(SubBook::Spatial, spatial)?;
        let zq_s = embed_indices(&projected, &s, 1, s.len())?;
        let v_s_tilde = self.decode_spatial(&zq_s)?;
        Ok(unpatchify_spatial(&v_s_tilde, &self.kernel)?.clamp(-0.5, 0.5)?)
    }

    /// Names of parameters belonging to the temporal branch.
    pub fn temporal_param_names(&self) -> Vec<String> {
        self.params.names().filter(|n| is_temporal_param(n)).cloned().collect()
    }
}

pub fn is_temporal_param(name: &str) -> bool {
    name.contains("temporal")
}
