//! Fingerprint extraction: grayscale conversion, CLAHE, Canny edges and
//! beat-synchronized averaging down to a 64×64 edge-frequency image.

mod canny;
mod clahe;

pub use canny::{canny, Thresholds};
pub use clahe::{clahe, ClaheConfig};

use crate::error::{Error, Result};
use crate::signal::FrameStack;

/// Side length of a fingerprint image.
pub const FP_SIDE: usize = 64;
/// Pixels in a flattened fingerprint.
pub const FP_LEN: usize = FP_SIDE * FP_SIDE;

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Input(format!("image extents must be positive, got {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::Input(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }
}

/// Interleaved 8-bit RGB frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbFrame {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbFrame {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != 3 * width * height {
            return Err(Error::Input(format!(
                "{} bytes for a {width}x{height} RGB frame",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }
}

/// ITU-R BT.601 luma, rounded.
pub fn to_grayscale(frame: &RgbFrame) -> GrayImage {
    let pixels = frame
        .data
        .chunks_exact(3)
        .map(|c| (0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64).round() as u8)
        .collect();
    GrayImage {
        width: frame.width,
        height: frame.height,
        pixels,
    }
}

/// A 64×64 edge-frequency image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintImage(Vec<f64>);

impl FingerprintImage {
    /// Builds from a row-major sequence of 4096 values in `[0, 1]`.
    pub fn from_flat(pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != FP_LEN {
            return Err(Error::Dimension(format!(
                "fingerprint needs {FP_LEN} pixels, got {}",
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Input("fingerprint values must lie in [0, 1]".into()));
        }
        Ok(Self(pixels))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.0[r * FP_SIDE + c]
    }

    pub fn pixels(&self) -> &[f64] {
        &self.0
    }
}

/// Row-major pixel sequence: `(r, c)` lands at `64·r + c`.
pub fn flatten(fp: &FingerprintImage) -> Vec<f64> {
    fp.0.clone()
}

/// Float image used between averaging and downsampling.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// Largest centered square.
pub fn center_crop(img: &FloatImage) -> FloatImage {
    let side = img.width.min(img.height);
    let x0 = (img.width - side) / 2;
    let y0 = (img.height - side) / 2;
    let mut data = Vec::with_capacity(side * side);
    for y in y0..y0 + side {
        data.extend_from_slice(&img.data[y * img.width + x0..y * img.width + x0 + side]);
    }
    FloatImage {
        width: side,
        height: side,
        data,
    }
}

/// Overlap weights of each output cell along one axis: `(source index, weight)`,
/// weights summing to one per output cell.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let a = o as f64 * scale;
            let b = (o + 1) as f64 * scale;
            let mut ws = Vec::new();
            let mut i = a.floor() as usize;
            while (i as f64) < b && i < src {
                let overlap = (b.min(i as f64 + 1.0) - a.max(i as f64)).max(0.0);
                if overlap > 0.0 {
                    ws.push((i, overlap / scale));
                }
                i += 1;
            }
            ws
        })
        .collect()
}

/// Area-average resampling; each output pixel is the mean of the source
/// area it covers, so the image mean is preserved.
pub fn area_resize(img: &FloatImage, width: usize, height: usize) -> FloatImage {
    let wx = area_weights(img.width, width);
    let wy = area_weights(img.height, height);
    let mut data = vec![0.0; width * height];
    for (oy, ys) in wy.iter().enumerate() {
        for (ox, xs) in wx.iter().enumerate() {
            let mut acc = 0.0;
            for &(sy, ay) in ys {
                for &(sx, ax) in xs {
                    acc += ay * ax * img.data[sy * img.width + sx];
                }
            }
            data[oy * width + ox] = acc;
        }
    }
    FloatImage { width, height, data }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FingerprintConfig {
    pub clahe: ClaheConfig,
    pub thresholds: Thresholds,
}

/// Edge map of one frame (CLAHE then Canny).
pub fn frame_edges(frame: &GrayImage, cfg: &FingerprintConfig) -> Result<GrayImage> {
    canny(&clahe(frame, &cfg.clahe)?, cfg.thresholds)
}

/// Mean Canny edge map over frames `start..=end`, center-cropped,
/// downsampled to 64×64 and scaled so its maximum is 1.
pub fn beat_synchronized_fingerprint(
    stack: &FrameStack,
    span: (usize, usize),
    cfg: &FingerprintConfig,
) -> Result<FingerprintImage> {
    let (start, end) = span;
    if end < start {
        return Err(Error::Input(format!("empty frame span {start}..={end}")));
    }
    if end >= stack.len() {
        return Err(Error::Input(format!(
            "frame span {start}..={end} exceeds the {} frames in the recording",
            stack.len()
        )));
    }
    let first = &stack.frames()[start];
    let (w, h) = (first.width(), first.height());
    let mut acc = vec![0.0; w * h];
    for frame in &stack.frames()[start..=end] {
        let edges = frame_edges(frame, cfg)?;
        for (a, &e) in acc.iter_mut().zip(edges.pixels()) {
            *a += e as f64;
        }
    }
    let n = (end - start + 1) as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    let avg = FloatImage {
        width: w,
        height: h,
        data: acc,
    };
    let small = area_resize(&center_crop(&avg), FP_SIDE, FP_SIDE);
    let max = small.data.iter().cloned().fold(0.0, f64::max);
    let data = if max > 0.0 {
        small.data.iter().map(|v| (v / max).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; FP_LEN]
    };
    FingerprintImage::from_flat(data)
}
