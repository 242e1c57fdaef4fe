use std::path::Path;

use candle_core::{DType, Device, Tensor};
use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::error::{Error, Result};

pub const CONTAINER_MAGIC: &[u8; 4] = b"SWTV";
pub const CONTAINER_VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 3 * 4;

/// `u8 / 255 - 0.5`.
pub fn normalize(v: u8) -> f32 {
    v as f32 / 255.0 - 0.5
}

/// Inverse of [`normalize`], rounding and saturating values outside the range.
pub fn denormalize(v: f32) -> u8 {
    ((v + 0.5) * 255.0).round().clamp(0.0, 255.0) as u8
}

/// A `(T, H, W, 3)` clip with values in `[-0.5, 0.5]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub clip_id: String,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Metadata only.
    pub frame_rate: f32,
    data: Vec<f32>,
}

impl VideoClip {
    pub fn from_normalized(
        clip_id: impl Into<String>,
        frames: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        let expected = frames * height * width * 3;
        if data.len() != expected {
            return Err(Error::shape(format!(
                "clip data has {} values, expected {expected} for {frames}x{height}x{width}x3",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(-0.5..=0.5).contains(*v)) {
            return Err(Error::validation(
                "pixels",
                format!("value {bad} outside [-0.5, 0.5]"),
            ));
        }
        Ok(Self {
            clip_id: clip_id.into(),
            frames,
            height,
            width,
            frame_rate: 8.0,
            data,
        })
    }

    pub fn from_u8(
        clip_id: impl Into<String>,
        frames: usize,
        height: usize,
        width: usize,
        bytes: &[u8],
    ) -> Result<Self> {
        Self::from_normalized(
            clip_id,
            frames,
            height,
            width,
            bytes.iter().copied().map(normalize).collect(),
        )
    }

    /// Builds a clip from model output, clamping into the normalized range.
    /// Accepts `(T, H, W, 3)` or `(1, T, H, W, 3)`.
    pub fn from_tensor(clip_id: impl Into<String>, t: &Tensor) -> Result<Self> {
        let t = match t.rank() {
            5 => t.squeeze(0)?,
            4 => t.clone(),
            r => return Err(Error::shape(format!("expected a rank-4 clip tensor, got rank {r}"))),
        };
        let (frames, height, width, c) = t.dims4()?;
        if c != 3 {
            return Err(Error::shape(format!("expected 3 channels, got {c}")));
        }
        let data: Vec<f32> = t
            .clamp(-0.5, 0.5)?
            .to_dtype(DType::F32)?
            .flatten_all()?
            .to_vec1()?;
        Self::from_normalized(clip_id, frames, height, width, data)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.frames, self.height, self.width)
    }

    pub fn pixel(&self, t: usize, y: usize, x: usize, c: usize) -> f32 {
        self.data[((t * self.height + y) * self.width + x) * 3 + c]
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().copied().map(denormalize).collect()
    }

    /// `(1, T, H, W, 3)` tensor.
    pub fn to_tensor(&self, dtype: DType) -> Result<Tensor> {
        Ok(Tensor::from_slice(
            &self.data,
            (1, self.frames, self.height, self.width, 3),
            &Device::Cpu,
        )?
        .to_dtype(dtype)?)
    }

    /// The first frame as a single-frame clip.
    pub fn first_frame(&self) -> Self {
        let n = self.height * self.width * 3;
        Self {
            clip_id: self.clip_id.clone(),
            frames: 1,
            height: self.height,
            width: self.width,
            frame_rate: self.frame_rate,
            data: self.data[..n].to_vec(),
        }
    }

    pub fn checksum(&self) -> [u8; 32] {
        Sha256::digest(encode_container(self)).into()
    }
}

/// Stacks equally shaped clips into a `(B, T, H, W, 3)` tensor.
pub fn stack_clips(clips: &[&VideoClip], dtype: DType) -> Result<Tensor> {
    let first = clips
        .first()
        .ok_or_else(|| Error::shape("cannot stack an empty batch"))?;
    let shape = first.shape();
    let mut data = Vec::with_capacity(clips.len() * first.data.len());
    for clip in clips {
        if clip.shape() != shape {
            return Err(Error::shape(format!(
                "batch mixes clip shapes {:?} and {:?}",
                shape,
                clip.shape()
            )));
        }
        data.extend_from_slice(&clip.data);
    }
    let (t, h, w) = shape;
    Ok(Tensor::from_vec(data, (clips.len(), t, h, w, 3), &Device::Cpu)?.to_dtype(dtype)?)
}

pub fn encode_container(clip: &VideoClip) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + clip.data.len());
    out.extend_from_slice(CONTAINER_MAGIC);
    out.push(CONTAINER_VERSION);
    for dim in [clip.frames, clip.height, clip.width] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    out.extend(clip.to_u8());
    out
}

pub fn decode_container(bytes: &[u8], clip_id: impl Into<String>) -> Result<VideoClip> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format("clip header", format!("{} bytes is too short", bytes.len())));
    }
    if &bytes[..4] != CONTAINER_MAGIC {
        return Err(Error::format("clip header", "bad magic"));
    }
    if bytes[4] != CONTAINER_VERSION {
        return Err(Error::format("clip header", format!("unsupported version {}", bytes[4])));
    }
    let dim = |i: usize| {
        let o = 5 + 4 * i;
        u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize
    };
    let (t, h, w) = (dim(0), dim(1), dim(2));
    let body = &bytes[HEADER_LEN..];
    let expected = t
        .checked_mul(h)
        .and_then(|n| n.checked_mul(w))
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| Error::format("clip header", "dimensions overflow"))?;
    if body.len() != expected {
        return Err(Error::format(
            "clip body",
            format!("expected {expected} samples for {t}x{h}x{w}x3, found {}", body.len()),
        ));
    }
    VideoClip::from_u8(clip_id, t, h, w, body)
}

pub fn read_clip(path: &Path) -> Result<VideoClip> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_container(&bytes, id)
}

/// Reads a clip and checks it against the configured patch kernel.
pub fn load_clip(path: &Path, config: &ModelConfig) -> Result<VideoClip> {
    let clip = read_clip(path)?;
    config.check_clip_dims(clip.frames, clip.height, clip.width)?;
    Ok(clip)
}

pub fn save_clip(path: &Path, clip: &VideoClip) -> Result<()> {
    std::fs::write(path, encode_container(clip)).map_err(|e| Error::io(path, e))
}
