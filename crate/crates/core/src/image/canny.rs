use std::collections::VecDeque;

use super::GrayImage;
use crate::error::{Error, Result};

/// Hysteresis thresholds on the Sobel gradient magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Thresholds {
    /// `hi = hi_frac · p99(|∇|)`, `lo = lo_frac · hi`.
    Auto { hi_frac: f64, lo_frac: f64 },
    Fixed { lo: f64, hi: f64 },
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds::Auto {
            hi_frac: 0.7,
            lo_frac: 0.4,
        }
    }
}

/// Magnitudes below this are treated as exact zeros (rounding residue of
/// smoothing a flat region).
const MAG_FLOOR: f64 = 1e-6;

fn gaussian_kernel() -> [f64; 5] {
    let sigma: f64 = 1.4;
    let mut k = [0.0; 5];
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - 2.0;
        *v = (-x * x / (2.0 * sigma * sigma)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

fn clamp_at(img: &[f64], w: usize, h: usize, x: isize, y: isize) -> f64 {
    let x = x.clamp(0, w as isize - 1) as usize;
    let y = y.clamp(0, h as isize - 1) as usize;
    img[y * w + x]
}

fn smooth(img: &GrayImage) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let k = gaussian_kernel();
    let src: Vec<f64> = img.pixels().iter().map(|&p| p as f64).collect();
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = (0..5)
                .map(|i| k[i] * clamp_at(&src, w, h, x as isize + i as isize - 2, y as isize))
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (0..5)
                .map(|i| k[i] * clamp_at(&tmp, w, h, x as isize, y as isize + i as isize - 2))
                .sum();
        }
    }
    out
}

/// Sobel gradient magnitude and direction bin (0: horizontal gradient,
/// 1: 45°, 2: vertical, 3: 135°) of the smoothed image.
pub(crate) fn gradients(img: &GrayImage) -> (Vec<f64>, Vec<u8>) {
    let (w, h) = (img.width(), img.height());
    let s = smooth(img);
    let at = |x: usize, y: usize, dx: isize, dy: isize| clamp_at(&s, w, h, x as isize + dx, y as isize + dy);
    let mut mag = vec![0.0; w * h];
    let mut dir = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let gx = at(x, y, 1, -1) + 2.0 * at(x, y, 1, 0) + at(x, y, 1, 1)
                - at(x, y, -1, -1)
                - 2.0 * at(x, y, -1, 0)
                - at(x, y, -1, 1);
            let gy = at(x, y, -1, 1) + 2.0 * at(x, y, 0, 1) + at(x, y, 1, 1)
                - at(x, y, -1, -1)
                - 2.0 * at(x, y, 0, -1)
                - at(x, y, 1, -1);
            let m = gx.hypot(gy);
            mag[y * w + x] = if m < MAG_FLOOR { 0.0 } else { m };
            let mut angle = gy.atan2(gx).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            dir[y * w + x] = if !(22.5..157.5).contains(&angle) {
                0
            } else if angle < 67.5 {
                1
            } else if angle < 112.5 {
                2
            } else {
                3
            };
        }
    }
    (mag, dir)
}

fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let idx = ((v.len() - 1) as f64 * q).round() as usize;
    v[idx]
}

/// Binary Canny edge map (pixels are 0 or 1).
///
/// With automatic thresholds, a 99th percentile of zero (edges on fewer than
/// 1% of pixels) falls back to the maximum magnitude.
pub fn canny(img: &GrayImage, thresholds: Thresholds) -> Result<GrayImage> {
    let (w, h) = (img.width(), img.height());
    let (mag, dir) = gradients(img);
    let (lo, hi) = match thresholds {
        Thresholds::Fixed { lo, hi } => {
            if !(lo >= 0.0 && lo < hi) {
                return Err(Error::Config(format!("canny thresholds need 0 ≤ lo < hi, got {lo}, {hi}")));
            }
            (lo, hi)
        }
        Thresholds::Auto { hi_frac, lo_frac } => {
            let mut p = percentile(&mag, 0.99);
            if p == 0.0 {
                p = mag.iter().cloned().fold(0.0, f64::max);
            }
            if p == 0.0 {
                return GrayImage::new(w, h, vec![0; w * h]);
            }
            let hi = hi_frac * p;
            (lo_frac * hi, hi)
        }
    };

    // Non-maximum suppression; ties go to the pixel on the lower-index side.
    let mut thin = vec![0.0; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let i = y * w + x;
            let m = mag[i];
            if m == 0.0 {
                continue;
            }
            let (before, after) = match dir[i] {
                0 => (mag[i - 1], mag[i + 1]),
                1 => (mag[i - w - 1], mag[i + w + 1]),
                2 => (mag[i - w], mag[i + w]),
                _ => (mag[i - w + 1], mag[i + w - 1]),
            };
            if m > before && m >= after {
                thin[i] = m;
            }
        }
    }

    let mut out = vec![0u8; w * h];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for (i, &m) in thin.iter().enumerate() {
        if m > hi {
            out[i] = 1;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if out[j] == 0 && thin[j] > lo {
                    out[j] = 1;
                    queue.push_back(j);
                }
            }
        }
    }
    GrayImage::new(w, h, out)
}
