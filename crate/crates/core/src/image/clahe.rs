use super::GrayImage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClaheConfig {
    /// Clip limit relative to the mean bin height of a tile histogram.
    pub clip: f64,
    pub tiles_x: usize,
    pub tiles_y: usize,
}

impl Default for ClaheConfig {
    fn default() -> Self {
        Self {
            clip: 2.0,
            tiles_x: 8,
            tiles_y: 8,
        }
    }
}

fn bounds(extent: usize, tiles: usize, j: usize) -> (usize, usize) {
    (j * extent / tiles, (j + 1) * extent / tiles)
}

/// Contrast-limited adaptive histogram equalization.
///
/// Each tile's histogram is clipped at `clip · area / 256` (at least 1), the
/// excess is spread uniformly over all bins, and the resulting CDF becomes
/// the tile's lookup table. Tiles holding a single gray level keep the
/// identity mapping. Pixels blend the four nearest tile tables bilinearly.
pub fn clahe(img: &GrayImage, cfg: &ClaheConfig) -> Result<GrayImage> {
    let (w, h) = (img.width(), img.height());
    if cfg.tiles_x == 0 || cfg.tiles_y == 0 || w < cfg.tiles_x || h < cfg.tiles_y {
        return Err(Error::Input(format!(
            "image {w}x{h} is smaller than the {}x{} tile grid",
            cfg.tiles_x, cfg.tiles_y
        )));
    }
    if !(cfg.clip > 0.0) {
        return Err(Error::Config(format!("CLAHE clip must be positive, got {}", cfg.clip)));
    }
    let px = img.pixels();
    let mut luts = vec![[0.0f64; 256]; cfg.tiles_x * cfg.tiles_y];
    for ty in 0..cfg.tiles_y {
        let (y0, y1) = bounds(h, cfg.tiles_y, ty);
        for tx in 0..cfg.tiles_x {
            let (x0, x1) = bounds(w, cfg.tiles_x, tx);
            let mut hist = [0.0f64; 256];
            for y in y0..y1 {
                for &p in &px[y * w + x0..y * w + x1] {
                    hist[p as usize] += 1.0;
                }
            }
            let area = ((x1 - x0) * (y1 - y0)) as f64;
            let lut = &mut luts[ty * cfg.tiles_x + tx];
            if hist.iter().filter(|&&c| c > 0.0).count() <= 1 {
                for (v, l) in lut.iter_mut().enumerate() {
                    *l = v as f64;
                }
                continue;
            }
            let limit = (cfg.clip * area / 256.0).max(1.0);
            let mut excess = 0.0;
            for c in &mut hist {
                if *c > limit {
                    excess += *c - limit;
                    *c = limit;
                }
            }
            let bonus = excess / 256.0;
            let mut cdf = 0.0;
            for (c, l) in hist.iter().zip(lut.iter_mut()) {
                cdf += c + bonus;
                *l = (cdf * 255.0 / area).min(255.0);
            }
        }
    }

    let tw = w as f64 / cfg.tiles_x as f64;
    let th = h as f64 / cfg.tiles_y as f64;
    let neighbors = |coord: usize, size: f64, tiles: usize| -> (usize, usize, f64) {
        let f = (coord as f64 + 0.5) / size - 0.5;
        let lo = f.floor();
        let frac = f - lo;
        let a = (lo.max(0.0) as usize).min(tiles - 1);
        let b = ((lo + 1.0).max(0.0) as usize).min(tiles - 1);
        (a, b, frac)
    };
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        let (ya, yb, fy) = neighbors(y, th, cfg.tiles_y);
        for x in 0..w {
            let (xa, xb, fx) = neighbors(x, tw, cfg.tiles_x);
            let v = px[y * w + x] as usize;
            let l = |ty: usize, tx: usize| luts[ty * cfg.tiles_x + tx][v];
            let top = l(ya, xa) * (1.0 - fx) + l(ya, xb) * fx;
            let bottom = l(yb, xa) * (1.0 - fx) + l(yb, xb) * fx;
            out[y * w + x] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
        }
    }
    GrayImage::new(w, h, out)
}
