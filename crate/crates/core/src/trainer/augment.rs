//! Training-time augmentation of beats and fingerprints.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::image::{FingerprintImage, FP_LEN};
use crate::signal::{BeatWaveform, NaturalSpline, BEAT_LEN};

const FP_SIDE: usize = 64;

/// Beat augmentation toggles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpgAugment {
    /// Amplitude scale drawn from `[0.9, 1.1]`.
    pub scale: bool,
    /// Additive Gaussian jitter with σ = 0.01.
    pub jitter: bool,
    /// Time stretch drawn from `[0.95, 1.05]`.
    pub stretch: bool,
}

/// Fingerprint augmentation toggles; each enabled transform fires with probability one half.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpAugment {
    pub flip: bool,
    /// Rotation drawn from `[−10°, 10°]`.
    pub rotate: bool,
    /// Crop of at least 0.9 of the area, resized back.
    pub crop: bool,
    /// Additive Gaussian noise with σ = 0.02.
    pub noise: bool,
}

impl Default for PpgAugment {
    fn default() -> Self {
        Self {
            scale: true,
            jitter: true,
            stretch: true,
        }
    }
}

impl Default for FpAugment {
    fn default() -> Self {
        Self {
            flip: true,
            rotate: true,
            crop: true,
            noise: true,
        }
    }
}

impl PpgAugment {
    pub const OFF: Self = Self {
        scale: false,
        jitter: false,
        stretch: false,
    };

    fn any(&self) -> bool {
        self.scale || self.jitter || self.stretch
    }
}

impl FpAugment {
    pub const OFF: Self = Self {
        flip: false,
        rotate: false,
        crop: false,
        noise: false,
    };
}

pub const JITTER_SIGMA: f64 = 0.01;
pub const NOISE_SIGMA: f64 = 0.02;
pub const MAX_ROTATION_DEG: f64 = 10.0;
pub const MIN_CROP_AREA: f64 = 0.9;

/// Augments one beat; the result is renormalized to `[0, 1]`.
pub fn augment_ppg(beat: &BeatWaveform, cfg: &PpgAugment, seed: u64) -> BeatWaveform {
    if !cfg.any() {
        return beat.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = beat.samples().to_vec();
    if cfg.stretch {
        let r: f64 = rng.random_range(0.95..=1.05);
        x = stretch(&x, r);
    }
    if cfg.scale {
        let s: f64 = rng.random_range(0.9..=1.1);
        x.iter_mut().for_each(|v| *v *= s);
    }
    if cfg.jitter {
        let n = Normal::new(0.0, JITTER_SIGMA).expect("positive sigma");
        x.iter_mut().for_each(|v| *v += n.sample(&mut rng));
    }
    let (lo, hi) = x.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    if hi - lo <= 0.0 {
        return beat.clone();
    }
    let y: Vec<f64> = x.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect();
    BeatWaveform::new(y).unwrap_or_else(|_| beat.clone())
}

/// Evaluates the beat at times `t·r` (clamped to the beat) on the original grid.
fn stretch(x: &[f64], r: f64) -> Vec<f64> {
    let spline = NaturalSpline::uniform(x).expect("beat has at least two samples");
    let last = (x.len() - 1) as f64;
    (0..BEAT_LEN)
        .map(|i| spline.eval((i as f64 * r).min(last)))
        .collect()
}

/// Mirrors columns.
pub fn hflip(fp: &FingerprintImage) -> FingerprintImage {
    let mut out = vec![0.0; FP_LEN];
    for r in 0..FP_SIDE {
        for c in 0..FP_SIDE {
            out[r * FP_SIDE + c] = fp.get(r, FP_SIDE - 1 - c);
        }
    }
    FingerprintImage::from_flat(out).expect("flip preserves range")
}

/// Bilinear sample with zero padding outside the image.
fn bilinear(px: &[f64], y: f64, x: f64) -> f64 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let at = |r: f64, c: f64| -> f64 {
        if r < 0.0 || c < 0.0 || r > (FP_SIDE - 1) as f64 || c > (FP_SIDE - 1) as f64 {
            0.0
        } else {
            px[r as usize * FP_SIDE + c as usize]
        }
    };
    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1.0)) + fy * ((1.0 - fx) * at(y0 + 1.0, x0) + fx * at(y0 + 1.0, x0 + 1.0))
}

/// Rotation about the image center by `deg` degrees.
pub fn rotate(fp: &FingerprintImage, deg: f64) -> FingerprintImage {
    let (s, c) = deg.to_radians().sin_cos();
    let mid = (FP_SIDE - 1) as f64 / 2.0;
    let px = fp.pixels();
    let mut out = vec![0.0; FP_LEN];
    for r in 0..FP_SIDE {
        for col in 0..FP_SIDE {
            let (y, x) = (r as f64 - mid, col as f64 - mid);
            let sy = c * y - s * x + mid;
            let sx = s * y + c * x + mid;
            out[r * FP_SIDE + col] = bilinear(px, sy, sx).clamp(0.0, 1.0);
        }
    }
    FingerprintImage::from_flat(out).expect("bilinear preserves range")
}

/// Square crop of side `side` at `(top, left)`, resized to the full image.
pub fn crop_resize(fp: &FingerprintImage, top: f64, left: f64, side: f64) -> FingerprintImage {
    let px = fp.pixels();
    let step = (side - 1.0) / (FP_SIDE - 1) as f64;
    let mut out = vec![0.0; FP_LEN];
    for r in 0..FP_SIDE {
        for c in 0..FP_SIDE {
            out[r * FP_SIDE + c] = bilinear(px, top + r as f64 * step, left + c as f64 * step).clamp(0.0, 1.0);
        }
    }
    FingerprintImage::from_flat(out).expect("bilinear preserves range")
}

/// Additive Gaussian noise, clipped to `[0, 1]`.
pub fn add_noise(fp: &FingerprintImage, sigma: f64, rng: &mut impl Rng) -> FingerprintImage {
    let n = Normal::new(0.0, sigma).expect("positive sigma");
    let out = fp.pixels().iter().map(|v| (v + n.sample(rng)).clamp(0.0, 1.0)).collect();
    FingerprintImage::from_flat(out).expect("clipped to range")
}

/// Applies a random subset of the enabled transforms.
pub fn augment_fingerprint(fp: &FingerprintImage, cfg: &FpAugment, seed: u64) -> FingerprintImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = fp.clone();
    if cfg.flip && rng.random_bool(0.5) {
        out = hflip(&out);
    }
    if cfg.rotate && rng.random_bool(0.5) {
        let deg = rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG);
        out = rotate(&out, deg);
    }
    if cfg.crop && rng.random_bool(0.5) {
        let area: f64 = rng.random_range(MIN_CROP_AREA..=1.0);
        let side = (FP_SIDE - 1) as f64 * area.sqrt() + 1.0;
        let room = FP_SIDE as f64 - side;
        let (top, left) = (rng.random_range(0.0..=room), rng.random_range(0.0..=room));
        out = crop_resize(&out, top, left, side);
    }
    if cfg.noise && rng.random_bool(0.5) {
        out = add_noise(&out, NOISE_SIGMA, &mut rng);
    }
    out
}
