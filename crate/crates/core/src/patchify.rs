//! Patch embedding of the reference frame (2D kernel) and the remaining
//! frames (3D tube kernel), plus the linear maps back to pixels.
//!
//! Patch vectors flatten their pixels in `(p_t, p_h, p_w, rgb)` row-major
//! order and grids are indexed row-major over `(tau, i, j)`.

use candle_core::Tensor;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Linear, ParamStore, INIT_STD};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    /// The reference frame, one time step.
    Spatial,
    /// `(T - 1) / p_t` tube groups.
    Temporal,
}

/// Embedded patches, `(B, t', h, w, D)`.
#[derive(Debug, Clone)]
pub struct PatchGrid {
    pub data: Tensor,
    pub kind: GridKind,
}

impl PatchGrid {
    pub fn new(data: Tensor, kind: GridKind) -> Result<Self> {
        let dims = data.dims();
        if dims.len() != 5 {
            return Err(Error::shape(format!("patch grid must be rank 5, got {dims:?}")));
        }
        if kind == GridKind::Spatial && dims[1] != 1 {
            return Err(Error::shape(format!(
                "spatial grid must have one time step, got {}",
                dims[1]
            )));
        }
        Ok(Self { data, kind })
    }

    /// `(B, t', h, w, D)`.
    pub fn dims(&self) -> (usize, usize, usize, usize, usize) {
        let d = self.data.dims();
        (d[0], d[1], d[2], d[3], d[4])
    }

    /// Tokens in row-major `(tau, i, j)` order, `(B, t'*h*w, D)`.
    pub fn tokens(&self) -> Result<Tensor> {
        let (b, t, h, w, d) = self.dims();
        Ok(self.data.reshape((b, t * h * w, d))?)
    }

    pub fn from_tokens(tokens: &Tensor, t: usize, h: usize, w: usize, kind: GridKind) -> Result<Self> {
        let (b, n, d) = tokens.dims3()?;
        if n != t * h * w {
            return Err(Error::shape(format!("{n} tokens cannot form a {t}x{h}x{w} grid")));
        }
        Self::new(tokens.reshape((b, t, h, w, d))?, kind)
    }
}

/// The two patch kernels, their positional tables and the pixel unprojections.
#[derive(Debug, Clone)]
pub struct PatchKernel {
    pub p_t: usize,
    pub p_h: usize,
    pub p_w: usize,
    pub d_model: usize,
    spatial_embed: Linear,
    temporal_embed: Linear,
    spatial_pos: Tensor,
    temporal_pos: Tensor,
    spatial_unembed: Linear,
    temporal_unembed: Linear,
}

impl PatchKernel {
    pub fn new(ps: &mut ParamStore, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let (pt, ph, pw, d) = (cfg.patch_t, cfg.patch_h, cfg.patch_w, cfg.d_model);
        let hw = cfg.patches_per_frame();
        Ok(Self {
            p_t: pt,
            p_h: ph,
            p_w: pw,
            d_model: d,
            spatial_embed: Linear::new(ps, &format!("{name}.spatial_embed"), ph * pw * 3, d)?,
            temporal_embed: Linear::new(ps, &format!("{name}.temporal_embed"), pt * ph * pw * 3, d)?,
            spatial_pos: ps.normal(format!("{name}.spatial_pos"), &[hw, d], INIT_STD)?,
            temporal_pos: ps.normal(format!("{name}.temporal_pos"), &[cfg.grid_t() * hw, d], INIT_STD)?,
            spatial_unembed: Linear::new(ps, &format!("{name}.spatial_unembed"), d, ph * pw * 3)?,
            temporal_unembed: Linear::new(ps, &format!("{name}.temporal_unembed"), d, pt * ph * pw * 3)?,
        })
    }

    fn check_frames(&self, x: &Tensor, p_t: usize) -> Result<(usize, usize, usize, usize)> {
        let dims = x.dims();
        if dims.len() != 5 || dims[4] != 3 {
            return Err(Error::shape(format!("expected (B, T, H, W, 3) frames, got {dims:?}")));
        }
        let (b, t, h, w) = (dims[0], dims[1], dims[2], dims[3]);
        if t == 0 || t % p_t != 0 {
            return Err(Error::shape(format!("{t} frames not divisible by p_t={p_t}")));
        }
        if h % self.p_h != 0 || w % self.p_w != 0 {
            return Err(Error::shape(format!(
                "{h}x{w} frame not divisible by {}x{} patches",
                self.p_h, self.p_w
            )));
        }
        Ok((b, t, h, w))
    }

    /// Content embedding of the reference frame, `(B, 1, H, W, 3)` → `(B, 1, h, w, D)`.
    pub fn embed_spatial(&self, frame: &Tensor) -> Result<Tensor> {
        let (b, t, hh, ww) = self.check_frames(frame, 1)?;
        if t != 1 {
            return Err(Error::shape(format!("spatial kernel takes one frame, got {t}")));
        }
        let (h, w) = (hh / self.p_h, ww / self.p_w);
        let patches = frame
            .reshape((b, h, self.p_h, w, self.p_w, 3))?
            .permute((0, 1, 3, 2, 4, 5))?
            .contiguous()?
            .reshape((b, h * w, self.p_h * self.p_w * 3))?;
        Ok(self
            .spatial_embed
            .forward(&patches)?
            .reshape((b, 1, h, w, self.d_model))?)
    }

    /// Content embedding of the tube groups, `(B, T-1, H, W, 3)` → `(B, t', h, w, D)`.
    pub fn embed_temporal(&self, frames: &Tensor) -> Result<Tensor> {
        let (b, t, hh, ww) = self.check_frames(frames, self.p_t)?;
        let (tt, h, w) = (t / self.p_t, hh / self.p_h, ww / self.p_w);
        let tubes = frames
            .reshape(vec![b, tt, self.p_t, h, self.p_h, w, self.p_w, 3])?
            .permute(vec![0, 1, 3, 5, 2, 4, 6, 7])?
            .contiguous()?
            .reshape((b, tt * h * w, self.p_t * self.p_h * self.p_w * 3))?;
        Ok(self
            .temporal_embed
            .forward(&tubes)?
            .reshape((b, tt, h, w, self.d_model))?)
    }

    fn add_pos(&self, grid: &Tensor, table: &Tensor, kind: GridKind) -> Result<PatchGrid> {
        let (b, t, h, w, d) = grid.dims5()?;
        if table.dims()[0] != t * h * w {
            return Err(Error::shape(format!(
                "{t}x{h}x{w} grid does not match the configured positional table ({} entries)",
                table.dims()[0]
            )));
        }
        let tokens = grid.reshape((b, t * h * w, d))?.broadcast_add(table)?;
        PatchGrid::from_tokens(&tokens, t, h, w, kind)
    }

    pub fn with_spatial_pos(&self, content: &Tensor) -> Result<PatchGrid> {
        self.add_pos(content, &self.spatial_pos, GridKind::Spatial)
    }

    pub fn with_temporal_pos(&self, content: &Tensor) -> Result<PatchGrid> {
        self.add_pos(content, &self.temporal_pos, GridKind::Temporal)
    }

    fn unembed(&self, grid: &PatchGrid, map: &Linear, p_t: usize) -> Result<Tensor> {
        let (b, t, h, w, _) = grid.dims();
        let pixels = map.forward(&grid.data)?;
        Ok(pixels
            .reshape(vec![b, t, h, w, p_t, self.p_h, self.p_w, 3])?
            .permute(vec![0, 1, 4, 2, 5, 3, 6, 7])?
            .contiguous()?
            .reshape((b, t * p_t, h * self.p_h, w * self.p_w, 3))?)
    }
}

/// `v_s = P_s(x_1)`: reference frame to a `(B, 1, h, w, D)` grid with positions added.
pub fn patchify_spatial(frame: &Tensor, kernel: &PatchKernel) -> Result<PatchGrid> {
    kernel.with_spatial_pos(&kernel.embed_spatial(frame)?)
}

/// `v_t = P_t(x_{2:T})`: tubes to a `(B, t', h, w, D)` grid with positions added.
pub fn patchify_temporal(frames: &Tensor, kernel: &PatchKernel) -> Result<PatchGrid> {
    kernel.with_temporal_pos(&kernel.embed_temporal(frames)?)
}

/// Spatial grid back to a `(B, 1, H, W, 3)` frame, block `(i, j)` filling
/// pixels `[i*p_h, (i+1)*p_h) x [j*p_w, (j+1)*p_w)`.
pub fn unpatchify_spatial(grid: &PatchGrid, kernel: &PatchKernel) -> Result<Tensor> {
    if grid.kind != GridKind::Spatial {
        return Err(Error::shape("unpatchify_spatial needs a spatial grid"));
    }
    kernel.unembed(grid, &kernel.spatial_unembed, 1)
}

/// Temporal grid back to `(B, t' * p_t, H, W, 3)` frames.
pub fn unpatchify_temporal(grid: &PatchGrid, kernel: &PatchKernel) -> Result<Tensor> {
    if grid.kind != GridKind::Temporal {
        return Err(Error::shape("unpatchify_temporal needs a temporal grid"));
    }
    kernel.unembed(grid, &kernel.temporal_unembed, kernel.p_t)
}
