use super::RidgeProfile;
use crate::error::{Error, Result};
use crate::image::{area_resize, center_crop, FingerprintImage, FloatImage, GrayImage, FP_LEN, FP_SIDE};

/// Per-recording placement of the finger on the lens.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Placement {
    /// Rotation in radians.
    pub rotation: f64,
    /// Translation in pixels.
    pub dx: f64,
    pub dy: f64,
}

/// A rendered ridge pattern with its analytic edge mask.
#[derive(Debug, Clone)]
pub struct RidgeImage {
    pub image: GrayImage,
    /// Unquantized intensities, before clamping to 8 bits.
    pub intensity: Vec<f64>,
    /// 1 where a ridge/valley boundary (`cos φ = 0`) passes between a pixel
    /// and its right or lower neighbour.
    pub edges: GrayImage,
}

/// Ridge phase at pixel `(x, y)` of a `size × size` image.
pub fn ridge_phase(p: &RidgeProfile, placement: &Placement, size: usize, x: f64, y: f64) -> f64 {
    let c = (size as f64 - 1.0) / 2.0;
    let s = size as f64;
    let (sin_r, cos_r) = placement.rotation.sin_cos();
    let (x0, y0) = (x - c - placement.dx, y - c - placement.dy);
    let u = cos_r * x0 + sin_r * y0;
    let v = -sin_r * x0 + cos_r * y0;
    let (sin_t, cos_t) = p.theta.sin_cos();
    std::f64::consts::TAU / p.period_px
        * (u * cos_t + v * sin_t + p.curv_a * (u * u - v * v) / s + p.curv_b * u * v / s)
        + p.phase
}

/// Renders the ridge pattern: `base + amplitude · illumination · cos φ`, where
/// illumination is a gentle linear gradient across the image.
pub fn gen_ridge_image(p: &RidgeProfile, size: usize, placement: &Placement) -> Result<RidgeImage> {
    if size < 32 {
        return Err(Error::Input(format!("ridge image size {size} is below 32")));
    }
    p.validate()?;
    let s = size as f64;
    let mut cosines = vec![0.0; size * size];
    let mut intensity = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let cphi = ridge_phase(p, placement, size, x as f64, y as f64).cos();
            let illum = 1.0 + p.illum_x * (x as f64 / s - 0.5) + p.illum_y * (y as f64 / s - 0.5);
            cosines[y * size + x] = cphi;
            intensity[y * size + x] = p.base + p.amplitude * illum * cphi;
        }
    }
    let pixels = intensity.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    let mut edges = vec![0u8; size * size];
    if p.amplitude > 0.0 {
        for y in 0..size {
            for x in 0..size {
                let a = cosines[y * size + x] >= 0.0;
                let right = x + 1 < size && (cosines[y * size + x + 1] >= 0.0) != a;
                let down = y + 1 < size && (cosines[(y + 1) * size + x] >= 0.0) != a;
                if right || down {
                    edges[y * size + x] = 1;
                }
            }
        }
    }
    Ok(RidgeImage {
        image: GrayImage::new(size, size, pixels)?,
        intensity,
        edges: GrayImage::new(size, size, edges)?,
    })
}

/// The edge mask reduced exactly like an extracted fingerprint: center
/// crop, area average to 64×64, scaled to a maximum of 1.
pub fn clean_fingerprint(edges: &GrayImage) -> Result<FingerprintImage> {
    let img = FloatImage {
        width: edges.width(),
        height: edges.height(),
        data: edges.pixels().iter().map(|&v| v as f64).collect(),
    };
    let small = area_resize(&center_crop(&img), FP_SIDE, FP_SIDE);
    let max = small.data.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        FingerprintImage::from_flat(small.data.iter().map(|v| v / max).collect())
    } else {
        FingerprintImage::from_flat(vec![0.0; FP_LEN])
    }
}
