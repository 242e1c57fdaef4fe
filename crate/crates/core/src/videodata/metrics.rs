use crate::error::{Error, Result};

use super::VideoClip;

/// Side of the uniform SSIM window (clipped to the frame size).
pub const SSIM_WINDOW: usize = 7;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub l2: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricsReport {
    /// `{"l2": .., "psnr": .., "ssim": ..}`; an infinite PSNR is written as `"inf"`.
    pub fn to_json(&self) -> String {
        let psnr = if self.psnr.is_infinite() {
            serde_json::Value::from("inf")
        } else {
            serde_json::Value::from(self.psnr)
        };
        serde_json::json!({ "l2": self.l2, "psnr": psnr, "ssim": self.ssim }).to_string()
    }
}

/// MSE, PSNR (peak-to-peak range 1) and mean single-scale SSIM.
///
/// SSIM uses a uniform `7x7` window over every valid position, per frame and
/// channel, on pixel values shifted into `[0, 1]`.
pub fn compute_metrics(original: &VideoClip, reconstructed: &VideoClip) -> Result<MetricsReport> {
    if original.shape() != reconstructed.shape() {
        return Err(Error::shape(format!(
            "metric inputs differ in shape: {:?} vs {:?}",
            original.shape(),
            reconstructed.shape()
        )));
    }
    let a = original.data();
    let b = reconstructed.data();
    let l2 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.len() as f64;
    let psnr = if l2 == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * l2.log10()
    };
    Ok(MetricsReport {
        l2,
        psnr,
        ssim: mean_ssim(original, reconstructed),
    })
}

fn mean_ssim(a: &VideoClip, b: &VideoClip) -> f64 {
    let (frames, h, w) = a.shape();
    let win = SSIM_WINDOW.min(h).min(w);
    let mut total = 0.0;
    for t in 0..frames {
        for c in 0..3 {
            let x: Vec<f64> = (0..h * w)
                .map(|i| a.pixel(t, i / w, i % w, c) as f64 + 0.5)
                .collect();
            let y: Vec<f64> = (0..h * w)
                .map(|i| b.pixel(t, i / w, i % w, c) as f64 + 0.5)
                .collect();
            total += channel_ssim(&x, &y, h, w, win);
        }
    }
    total / (frames * 3) as f64
}

/// Summed-area table with a zero border row and column.
fn integral(values: impl Iterator<Item = f64>, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; (h + 1) * (w + 1)];
    let values: Vec<f64> = values.collect();
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += values[y * w + x];
            out[(y + 1) * (w + 1) + x + 1] = out[y * (w + 1) + x + 1] + row;
        }
    }
    out
}

fn channel_ssim(x: &[f64], y: &[f64], h: usize, w: usize, win: usize) -> f64 {
    let sx = integral(x.iter().copied(), h, w);
    let sy = integral(y.iter().copied(), h, w);
    let sxx = integral(x.iter().map(|v| v * v), h, w);
    let syy = integral(y.iter().map(|v| v * v), h, w);
    let sxy = integral(x.iter().zip(y).map(|(a, b)| a * b), h, w);
    let stride = w + 1;
    let window_sum = |s: &[f64], r: usize, c: usize| {
        s[(r + win) * stride + c + win] - s[r * stride + c + win] - s[(r + win) * stride + c]
            + s[r * stride + c]
    };
    let n = (win * win) as f64;
    let positions = (h - win + 1) * (w - win + 1);
    let mut acc = 0.0;
    for r in 0..=h - win {
        for c in 0..=w - win {
            let mx = window_sum(&sx, r, c) / n;
            let my = window_sum(&sy, r, c) / n;
            let vx = window_sum(&sxx, r, c) / n - mx * mx;
            let vy = window_sum(&syy, r, c) / n - my * my;
            let cov = window_sum(&sxy, r, c) / n - mx * my;
            acc += ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
        }
    }
    acc / positions as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(frames: usize, h: usize, w: usize) -> VideoClip {
        let n = frames * h * w * 3;
        let data = (0..n).map(|i| (i % 97) as f32 / 97.0 - 0.49).collect();
        VideoClip::from_normalized("r", frames, h, w, data).unwrap()
    }

    #[test]
    fn identity_is_perfect() {
        let x = ramp(2, 9, 8);
        let m = compute_metrics(&x, &x).unwrap();
        assert_eq!(m.l2, 0.0);
        assert_eq!(m.psnr, f64::INFINITY);
        assert_eq!(m.ssim, 1.0);
        assert!(m.to_json().contains("\"psnr\":\"inf\""));
    }

    #[test]
    fn constant_offset_gives_offset_squared() {
        let x = VideoClip::from_normalized("a", 1, 4, 4, vec![0.0; 48]).unwrap();
        let y = VideoClip::from_normalized("b", 1, 4, 4, vec![0.1; 48]).unwrap();
        let m = compute_metrics(&x, &y).unwrap();
        assert!((m.l2 - 0.01).abs() < 1e-9);
        assert!((m.psnr - 20.0).abs() < 1e-5);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(compute_metrics(&ramp(1, 4, 4), &ramp(1, 4, 5)).is_err());
    }

    #[test]
    fn ignores_clip_id() {
        let a = ramp(1, 8, 8);
        let mut b = a.clone();
        b.clip_id = "other".into();
        let c = ramp(1, 8, 8);
        assert_eq!(compute_metrics(&a, &c).unwrap(), compute_metrics(&b, &c).unwrap());
    }
}
