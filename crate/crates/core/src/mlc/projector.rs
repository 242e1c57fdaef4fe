use candle_core::Tensor;

use super::NormalizedAdjacency;
use crate::error::{Error, Result};
use crate::nn::{l2_normalize, Linear, ParamStore};

/// Two graph-convolution layers followed by a linear map into the latent space:
/// `H1 = relu(Â X W1)`, `H2 = relu(Â H1 W2)`, `out = H2 W_out + b`.
#[derive(Debug, Clone)]
pub struct GcnProjector {
    w1: Linear,
    w2: Linear,
    out: Linear,
    d_text: usize,
}

impl GcnProjector {
    pub fn new(ps: &mut ParamStore, name: &str, d_text: usize, hidden: usize, d_latent: usize) -> Result<Self> {
        Ok(Self {
            w1: Linear::glorot(ps, &format!("{name}.w1"), d_text, hidden, false)?,
            w2: Linear::glorot(ps, &format!("{name}.w2"), hidden, hidden, false)?,
            out: Linear::glorot(ps, &format!("{name}.out"), hidden, d_latent, true)?,
            d_text,
        })
    }

    pub fn forward(&self, raw: &Tensor, adjacency: &NormalizedAdjacency) -> Result<Tensor> {
        let (_, d) = raw.dims2()?;
        if d != self.d_text {
            return Err(Error::shape(format!(
                "projector expects {}-d text embeddings, got {d}",
                self.d_text
            )));
        }
        let h1 = adjacency.propagate(&self.w1.forward(raw)?)?.relu()?;
        let h2 = adjacency.propagate(&self.w2.forward(&h1)?)?.relu()?;
        let out = self.out.forward(&h2)?;
        let centered = out.broadcast_sub(&out.mean_keepdim(0)?)?;
        l2_normalize(&centered)
    }
}
