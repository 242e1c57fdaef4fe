//! Side-by-side original / reconstruction / |error| image grids as binary PPM.

use crate::error::{Error, Result};
use crate::videodata::{denormalize, VideoClip};

/// Three rows (original, reconstruction, absolute error) of `T` frame tiles.
/// The error row maps `|a - b|` in `[0, 1]` linearly to `[0, 255]`.
pub fn reconstruction_grid(original: &VideoClip, recon: &VideoClip) -> Result<(usize, usize, Vec<u8>)> {
    if original.shape() != recon.shape() {
        return Err(Error::shape(format!(
            "grid needs matching clips, got {:?} and {:?}",
            original.shape(),
            recon.shape()
        )));
    }
    let (t, h, w) = original.shape();
    let (width, height) = (t * w, 3 * h);
    let mut pixels = vec![0u8; width * height * 3];
    for f in 0..t {
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let a = original.pixel(f, y, x, c);
                    let b = recon.pixel(f, y, x, c);
                    let err = ((a - b).abs() * 255.0).round().clamp(0.0, 255.0) as u8;
                    for (row, v) in [denormalize(a), denormalize(b), err].into_iter().enumerate() {
                        let (gy, gx) = (row * h + y, f * w + x);
                        pixels[(gy * width + gx) * 3 + c] = v;
                    }
                }
            }
        }
    }
    Ok((width, height, pixels))
}

/// `P6` header followed by raw RGB bytes.
pub fn encode_ppm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}
