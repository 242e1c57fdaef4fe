use std::ops::Range;

use candle_core::{DType, Tensor, D};

use crate::error::{Error, Result};

/// Result of nearest-neighbour quantization of a `(B, L, d)` token batch.
///
/// `sg_z` and `sg_q` are the stop-gradient copies used by the commitment
/// loss. In live mode they are detached views of the current values; a
/// [`FrozenStream`] pins them (and the code assignment) to an earlier
/// evaluation, which is what finite-difference probes differentiate.
#[derive(Debug, Clone)]
pub struct Quantized {
    /// Global codebook indices, row-major over `(B, L)`.
    pub indices: Vec<u32>,
    /// Selected projected rows; gradients reach the projector through these.
    pub embeddings: Tensor,
    /// `z + sg[q - z]`: forward value of `q`, gradient of identity w.r.t. `z`.
    pub straight_through: Tensor,
    pub sg_z: Tensor,
    pub sg_q: Tensor,
}

/// Code assignment and stop-gradient values captured from one evaluation.
#[derive(Debug, Clone)]
pub struct FrozenStream {
    pub indices: Vec<u32>,
    pub z: Tensor,
    pub q: Tensor,
}

impl Quantized {
    pub fn freeze(&self) -> Result<FrozenStream> {
        Ok(FrozenStream {
            indices: self.indices.clone(),
            z: self.sg_z.copy()?,
            q: self.sg_q.copy()?,
        })
    }
}

/// Index of the nearest row of `codebook` (`n x d`, row-major) to `z`,
/// restricted to `span`, by exact squared distance; lowest index wins ties.
pub fn nearest_exact(z: &[f64], codebook: &[f64], d: usize, span: Range<usize>) -> (usize, f64) {
    let mut best = (span.start, f64::INFINITY);
    for i in span {
        let row = &codebook[i * d..(i + 1) * d];
        let dist: f64 = z.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum();
        if dist < best.1 {
            best = (i, dist);
        }
    }
    best
}

/// Nearest-neighbour search of every token against `projected[span]`.
///
/// Distances come from one matrix product (`|z|^2 - 2 z.c + |c|^2`); every
/// row within rounding distance of the minimum is then re-scored exactly so
/// the result equals exhaustive search with lowest-index tie-breaking.
pub fn nearest_indices(z: &Tensor, projected: &Tensor, span: Range<usize>) -> Result<Vec<u32>> {
    if span.is_empty() {
        return Err(Error::validation("codebook", "permitted span is empty"));
    }
    let (_, d) = projected.dims2()?;
    let zd = z.dims();
    if zd.last() != Some(&d) {
        return Err(Error::shape(format!("tokens {zd:?} do not match codebook width {d}")));
    }
    let n: usize = zd[..zd.len() - 1].iter().product();
    let z = z.detach().reshape((n, d))?.to_dtype(DType::F64)?;
    let book = projected.detach().to_dtype(DType::F64)?;
    let sub = book.narrow(0, span.start, span.len())?;
    let z_sq = z.sqr()?.sum_keepdim(D::Minus1)?;
    let c_sq = sub.sqr()?.sum(D::Minus1)?.unsqueeze(0)?;
    let dist = z_sq
        .broadcast_add(&c_sq)?
        .sub(&(z.matmul(&sub.t()?)? * 2.0)?)?;
    let dist: Vec<Vec<f64>> = dist.to_vec2()?;
    let z_rows: Vec<f64> = z.flatten_all()?.to_vec1()?;
    let book_rows: Vec<f64> = book.flatten_all()?.to_vec1()?;
    let c_norms: Vec<f64> = c_sq.flatten_all()?.to_vec1()?;
    let max_c = c_norms.iter().copied().fold(0.0, f64::max);

    let mut out = Vec::with_capacity(n);
    for (r, row) in dist.iter().enumerate() {
        let zr = &z_rows[r * d..(r + 1) * d];
        let min = row.iter().copied().fold(f64::INFINITY, f64::min);
        let z_norm: f64 = zr.iter().map(|v| v * v).sum();
        let slack = 1e-9 * (z_norm + max_c + 1.0) * d as f64;
        let mut best = (usize::MAX, f64::INFINITY);
        for (j, &approx) in row.iter().enumerate() {
            if approx <= min + slack {
                let i = span.start + j;
                let exact = nearest_exact(zr, &book_rows, d, i..i + 1).1;
                if exact < best.1 {
                    best = (i, exact);
                }
            }
        }
        out.push(best.0 as u32);
    }
    Ok(out)
}

fn gather(projected: &Tensor, indices: &[u32], shape: &[usize]) -> Result<Tensor> {
    let (_, d) = projected.dims2()?;
    let idx = Tensor::from_slice(indices, indices.len(), projected.device())?;
    let mut out_shape = shape[..shape.len() - 1].to_vec();
    out_shape.push(d);
    Ok(projected.index_select(&idx, 0)?.reshape(out_shape)?)
}

/// Looks up projected rows for known indices, `(B, L, d)`.
pub fn embed_indices(projected: &Tensor, indices: &[u32], batch: usize, len: usize) -> Result<Tensor> {
    let (n, d) = projected.dims2()?;
    if let Some(&bad) = indices.iter().find(|&&i| i as usize >= n) {
        return Err(Error::IndexOutOfRange {
            what: "codebook",
            index: bad as usize,
            len: n,
        });
    }
    if indices.len() != batch * len {
        return Err(Error::shape(format!(
            "{} indices cannot form a {batch}x{len} token batch",
            indices.len()
        )));
    }
    gather(projected, indices, &[batch, len, d])
}

/// Quantizes `z` against the rows of `projected` inside `span`.
pub fn quantize(z: &Tensor, projected: &Tensor, span: Range<usize>, frozen: Option<&FrozenStream>) -> Result<Quantized> {
    match frozen {
        None => {
            let indices = nearest_indices(z, projected, span)?;
            let embeddings = gather(projected, &indices, z.dims())?;
            let sg_z = z.detach();
            let sg_q = embeddings.detach();
            let straight_through = (z + (&sg_q - &sg_z)?)?;
            Ok(Quantized {
                indices,
                embeddings,
                straight_through,
                sg_z,
                sg_q,
            })
        }
        Some(f) => {
            if f.z.dims() != z.dims() {
                return Err(Error::shape("frozen stream does not match token shape"));
            }
            let embeddings = gather(projected, &f.indices, z.dims())?;
            let straight_through = (z + (&f.q - &f.z)?)?;
            Ok(Quantized {
                indices: f.indices.clone(),
                embeddings,
                straight_through,
                sg_z: f.z.clone(),
                sg_q: f.q.clone(),
            })
        }
    }
}

/// What a decoder reads during a training pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum DecoderInput {
    /// Straight-through quantized latents.
    #[default]
    Quantized,
    /// Encoder outputs, bypassing the codebook.
    Continuous,
}

impl Quantized {
    pub fn decoder_input(&self, z: &Tensor, input: DecoderInput) -> Tensor {
        match input {
            DecoderInput::Quantized => self.straight_through.clone(),
            DecoderInput::Continuous => z.clone(),
        }
    }
}

/// Mean over tokens of the squared Euclidean distance along the last axis.
pub fn token_sq_dist(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok((a - b)?.sqr()?.sum(D::Minus1)?.mean_all()?)
}

/// The two halves of the commitment loss for one stream.
#[derive(Debug, Clone)]
pub struct VqTerms {
    /// `||sg[z] - q||^2`, moves the codebook projection.
    pub codebook: Tensor,
    /// `||z - sg[q]||^2`, moves the encoder.
    pub commitment: Tensor,
}

impl VqTerms {
    pub fn of(z: &Tensor, q: &Quantized) -> Result<Self> {
        Ok(Self {
            codebook: token_sq_dist(&q.sg_z, &q.embeddings)?,
            commitment: token_sq_dist(z, &q.sg_q)?,
        })
    }

    pub fn weighted(&self, beta: f64) -> Result<Tensor> {
        Ok((&self.codebook + (&self.commitment * beta)?)?)
    }
}

/// `||sg[z_s] - q_s||^2 + beta ||z_s - sg[q_s]||^2 + ||sg[z_t] - q_t||^2 + beta ||z_t - sg[q_t]||^2`,
/// each squared norm averaged over tokens.
pub fn vq_loss(z_s: &Tensor, q_s: &Tensor, z_t: &Tensor, q_t: &Tensor, beta: f64) -> Result<Tensor> {
    let stream = |z: &Tensor, q: &Tensor| -> Result<Tensor> {
        let codebook = token_sq_dist(&z.detach(), q)?;
        let commitment = token_sq_dist(z, &q.detach())?;
        Ok((codebook + (commitment * beta)?)?)
    };
    Ok((stream(z_s, q_s)? + stream(z_t, q_t)?)?)
}
