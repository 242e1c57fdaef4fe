use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::{l2_normalize, FeedForward, LayerNorm, Linear, MultiHeadAttention, ParamStore, INIT_STD};

/// How a `(B, N, D)` stream is grouped before self-attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// `N = t * hw`; attention over the `hw` axis per time step, `(B*t, hw, D)`.
    Spatial { t: usize, hw: usize },
    /// `N = t * hw`; attention over the `t` axis per location, `(B*hw, t, D)`.
    Temporal { t: usize, hw: usize },
    /// Attention over the whole sequence.
    Full,
}

impl Layout {
    fn check(&self, n: usize) -> Result<()> {
        match *self {
            Layout::Spatial { t, hw } | Layout::Temporal { t, hw } if t * hw != n => Err(Error::shape(format!(
                "stream of {n} tokens does not fit a {t}x{hw} layout"
            ))),
            _ => Ok(()),
        }
    }

    pub fn group(&self, x: &Tensor) -> Result<Tensor> {
        let (b, n, d) = x.dims3()?;
        self.check(n)?;
        Ok(match *self {
            Layout::Spatial { t, hw } => x.reshape((b * t, hw, d))?,
            Layout::Temporal { t, hw } => x
                .reshape((b, t, hw, d))?
                .transpose(1, 2)?
                .contiguous()?
                .reshape((b * hw, t, d))?,
            Layout::Full => x.clone(),
        })
    }

    pub fn ungroup(&self, x: &Tensor, batch: usize) -> Result<Tensor> {
        let (_, _, d) = x.dims3()?;
        Ok(match *self {
            Layout::Spatial { t, hw } => x.reshape((batch, t * hw, d))?,
            Layout::Temporal { t, hw } => x
                .reshape((batch, hw, t, d))?
                .transpose(1, 2)?
                .contiguous()?
                .reshape((batch, t * hw, d))?,
            Layout::Full => x.clone(),
        })
    }
}

/// Pre-norm self-attention, feed-forward and cross-attention sublayers.
#[derive(Debug, Clone)]
pub struct DqaeBlock {
    ln_self: LayerNorm,
    self_attn: MultiHeadAttention,
    ln_ff: LayerNorm,
    ff: FeedForward,
    ln_cross: LayerNorm,
    ln_context: LayerNorm,
    cross_attn: MultiHeadAttention,
    query_pos: Option<Tensor>,
}

impl DqaeBlock {
    pub fn new(ps: &mut ParamStore, name: &str, d_model: usize, n_heads: usize, ff_hidden: usize) -> Result<Self> {
        Ok(Self {
            ln_self: LayerNorm::new(ps, &format!("{name}.ln_self"), d_model)?,
            self_attn: MultiHeadAttention::new(ps, &format!("{name}.self_attn"), d_model, n_heads)?,
            ln_ff: LayerNorm::new(ps, &format!("{name}.ln_ff"), d_model)?,
            ff: FeedForward::new(ps, &format!("{name}.ff"), d_model, ff_hidden)?,
            ln_cross: LayerNorm::new(ps, &format!("{name}.ln_cross"), d_model)?,
            ln_context: LayerNorm::new(ps, &format!("{name}.ln_context"), d_model)?,
            cross_attn: MultiHeadAttention::new(ps, &format!("{name}.cross_attn"), d_model, n_heads)?,
            query_pos: None,
        })
    }

    /// Adds a learnable `(n, d_model)` embedding to the normalized stream
    /// wherever it acts as an attention query.
    pub fn with_query_pos(mut self, ps: &mut ParamStore, name: &str, n: usize, d_model: usize) -> Result<Self> {
        self.query_pos = Some(ps.normal(format!("{name}.query_pos"), &[n, d_model], INIT_STD)?);
        Ok(self)
    }

    fn with_pos(&self, x: &Tensor) -> Result<Tensor> {
        match &self.query_pos {
            Some(p) => Ok(x.broadcast_add(p)?),
            None => Ok(x.clone()),
        }
    }

    /// `x + SA(LN(x))` within the layout groups, then `x + FF(LN(x))`.
    pub fn self_and_ff(&self, x: &Tensor, layout: Layout) -> Result<Tensor> {
        let b = x.dims()[0];
        let h = self.with_pos(&self.ln_self.forward(x)?)?;
        let g = layout.group(&h)?;
        let attn = layout.ungroup(&self.self_attn.forward(&g, &g)?, b)?;
        let x = (x + attn)?;
        Ok((&x + self.ff.forward(&self.ln_ff.forward(&x)?)?)?)
    }

    /// `q + CA(LN(q), LN(context))`.
    pub fn cross(&self, q: &Tensor, context: &Tensor) -> Result<Tensor> {
        let query = self.with_pos(&self.ln_cross.forward(q)?)?;
        let kv = self.ln_context.forward(context)?;
        Ok((q + self.cross_attn.forward(&query, &kv)?)?)
    }
}

/// Pre-norm self-attention and feed-forward, no cross-attention.
#[derive(Debug, Clone)]
pub struct SelfBlock {
    ln_self: LayerNorm,
    self_attn: MultiHeadAttention,
    ln_ff: LayerNorm,
    ff: FeedForward,
}

impl SelfBlock {
    pub fn new(ps: &mut ParamStore, name: &str, d_model: usize, n_heads: usize, ff_hidden: usize) -> Result<Self> {
        Ok(Self {
            ln_self: LayerNorm::new(ps, &format!("{name}.ln_self"), d_model)?,
            self_attn: MultiHeadAttention::new(ps, &format!("{name}.self_attn"), d_model, n_heads)?,
            ln_ff: LayerNorm::new(ps, &format!("{name}.ln_ff"), d_model)?,
            ff: FeedForward::new(ps, &format!("{name}.ff"), d_model, ff_hidden)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.ln_self.forward(x)?;
        let x = (x + self.self_attn.forward(&h, &h)?)?;
        Ok((&x + self.ff.forward(&self.ln_ff.forward(&x)?)?)?)
    }
}

/// Learnable queries read an evolving patch stream through cross-attention,
/// then pass a final norm and a linear bridge into the latent space.
#[derive(Debug, Clone)]
pub struct QueryEncoder {
    blocks: Vec<DqaeBlock>,
    ln_out: LayerNorm,
    bridge: Linear,
}

impl QueryEncoder {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        layers: usize,
        d_model: usize,
        n_heads: usize,
        ff_hidden: usize,
        d_latent: usize,
    ) -> Result<Self> {
        let blocks = (0..layers)
            .map(|i| DqaeBlock::new(ps, &format!("{name}.blocks.{i}"), d_model, n_heads, ff_hidden))
            .collect::<Result<_>>()?;
        Ok(Self {
            blocks,
            ln_out: LayerNorm::new(ps, &format!("{name}.ln_out"), d_model)?,
            bridge: Linear::new(ps, &format!("{name}.bridge"), d_model, d_latent)?,
        })
    }

    /// `patches: (B, N, D)`, `queries: (L, D)` → latents `(B, L, d_latent)`.
    pub fn forward(&self, patches: &Tensor, queries: &Tensor, layout: Layout) -> Result<Tensor> {
        let b = patches.dims()[0];
        let (l, d) = queries.dims2()?;
        let mut x = patches.clone();
        let mut q = queries.unsqueeze(0)?.broadcast_as((b, l, d))?.contiguous()?;
        for block in &self.blocks {
            x = block.self_and_ff(&x, layout)?;
            q = block.cross(&q, &x)?;
        }
        l2_normalize(&self.bridge.forward(&self.ln_out.forward(&q)?)?)
    }
}

/// A query stream refined by self-attention and by cross-attention into
/// bridged latent tokens, ending in a norm and a linear head.
#[derive(Debug, Clone)]
pub struct QueryDecoder {
    bridge: Linear,
    blocks: Vec<DqaeBlock>,
    ln_out: LayerNorm,
    head: Linear,
}

impl QueryDecoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        layers: usize,
        d_model: usize,
        n_heads: usize,
        ff_hidden: usize,
        d_latent: usize,
        query_pos: Option<usize>,
    ) -> Result<Self> {
        let bridge = Linear::new(ps, &format!("{name}.bridge"), d_latent, d_model)?;
        let mut blocks = Vec::with_capacity(layers);
        for i in 0..layers {
            let block_name = format!("{name}.blocks.{i}");
            let block = DqaeBlock::new(ps, &block_name, d_model, n_heads, ff_hidden)?;
            blocks.push(match query_pos {
                Some(n) => block.with_query_pos(ps, &block_name, n, d_model)?,
                None => block,
            });
        }
        Ok(Self {
            bridge,
            blocks,
            ln_out: LayerNorm::new(ps, &format!("{name}.ln_out"), d_model)?,
            head: Linear::new(ps, &format!("{name}.head"), d_model, d_model)?,
        })
    }

    /// `stream: (B, N, D)`, `latents: (B, L, d_latent)` → `(B, N, D)`.
    pub fn forward(&self, stream: &Tensor, latents: &Tensor, layout: Layout) -> Result<Tensor> {
        let memory = self.bridge.forward(latents)?;
        let mut y = stream.clone();
        for block in &self.blocks {
            y = block.self_and_ff(&y, layout)?;
            y = block.cross(&y, &memory)?;
        }
        self.head.forward(&self.ln_out.forward(&y)?)
    }
}
