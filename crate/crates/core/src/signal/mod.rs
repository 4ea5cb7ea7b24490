//! PPG extraction: frame intensity averaging, detrending, zero-phase
//! low-pass filtering, beat separation and selection, and spline
//! resampling to fixed-length waveforms.

mod beats;
mod filter;
mod spline;

pub use beats::{estimate_heart_rate, local_periods, select_beats, separate_beats, Beat, SeparationConfig};
pub use filter::{detrend, lowpass, lowpass_taps};
pub use spline::{resample_uniform, NaturalSpline};

#[cfg(test)]
pub(crate) use beats::pearson;

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Samples per resampled beat.
pub const BEAT_LEN: usize = 300;

/// A recording as a sequence of same-sized grayscale frames.
#[derive(Debug, Clone)]
pub struct FrameStack {
    frames: Vec<GrayImage>,
    fps: f64,
}

impl FrameStack {
    /// Requires at least one frame, equal frame sizes and a positive rate.
    ///
    /// Recordings shorter than two seconds are accepted here; the beat
    /// separator rejects them later with a specific error.
    pub fn new(frames: Vec<GrayImage>, fps: f64) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Input("frame stack is empty".into()));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::Input(format!("invalid frame rate {fps}")));
        }
        let (w, h) = (frames[0].width(), frames[0].height());
        if let Some(i) = frames.iter().position(|f| f.width() != w || f.height() != h) {
            return Err(Error::Input(format!(
                "frame {i} is {}x{}, expected {w}x{h}",
                frames[i].width(),
                frames[i].height()
            )));
        }
        Ok(Self { frames, fps })
    }

    pub fn frames(&self) -> &[GrayImage] {
        &self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawSignal {
    pub samples: Vec<f64>,
    pub fs: f64,
}

impl RawSignal {
    pub fn new(samples: Vec<f64>, fs: f64) -> Result<Self> {
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("signal contains non-finite samples".into()));
        }
        if !(fs > 0.0) {
            return Err(Error::Input(format!("invalid sampling rate {fs}")));
        }
        Ok(Self { samples, fs })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// A beat resampled to [`BEAT_LEN`] samples and min-max normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatWaveform(Vec<f64>);

impl BeatWaveform {
    /// Validates length, range and non-constancy.
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.len() != BEAT_LEN {
            return Err(Error::Dimension(format!(
                "beat waveform has {} samples, expected {BEAT_LEN}",
                samples.len()
            )));
        }
        if samples.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Input("beat waveform values must lie in [0, 1]".into()));
        }
        let (lo, hi) = min_max(&samples);
        if hi <= lo {
            return Err(Error::Quality("beat waveform is constant".into()));
        }
        Ok(Self(samples))
    }

    pub fn samples(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

fn min_max(x: &[f64]) -> (f64, f64) {
    x.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Mean pixel intensity of every frame.
pub fn frame_mean_intensity(stack: &FrameStack) -> RawSignal {
    let samples = stack
        .frames
        .iter()
        .map(|f| {
            let s: u64 = f.pixels().iter().map(|&p| p as u64).sum();
            s as f64 / f.pixels().len() as f64
        })
        .collect();
    RawSignal {
        samples,
        fs: stack.fps,
    }
}

/// Natural cubic spline resampling to [`BEAT_LEN`] samples followed by
/// min-max normalization.
pub fn resample_beat(beat: &[f64]) -> Result<BeatWaveform> {
    if beat.len() < 8 {
        return Err(Error::Input(format!(
            "beat of {} samples is shorter than 8",
            beat.len()
        )));
    }
    let mut out = resample_uniform(beat, BEAT_LEN)?;
    let (lo, hi) = min_max(&out);
    if !(hi - lo > 1e-12 * hi.abs().max(1.0)) {
        return Err(Error::Quality("constant beat cannot be normalized".into()));
    }
    for v in &mut out {
        *v = ((*v - lo) / (hi - lo)).clamp(0.0, 1.0);
    }
    Ok(BeatWaveform(out))
}

/// Tunables for the whole signal path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalConfig {
    pub detrend_window_s: f64,
    pub cutoff_hz: f64,
    pub min_corr: f64,
    pub separation: SeparationConfig,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            detrend_window_s: 2.0,
            cutoff_hz: 4.0,
            min_corr: 0.8,
            separation: SeparationConfig::default(),
        }
    }
}

/// Selected beats together with the frame span each one covers.
#[derive(Debug, Clone)]
pub struct ExtractedBeats {
    pub waveforms: Vec<BeatWaveform>,
    /// Inclusive `(start, end)` sample indices into the recording.
    pub spans: Vec<(usize, usize)>,
    /// Beats found before selection.
    pub separated: usize,
}

/// Runs the full path from a filtered-or-raw signal to selected waveforms.
pub fn extract_beats(raw: &RawSignal, cfg: &SignalConfig) -> Result<ExtractedBeats> {
    let filtered = lowpass(&detrend(raw, cfg.detrend_window_s)?, cfg.cutoff_hz)?;
    let beats = separate_beats(&filtered, &cfg.separation)?;
    let separated = beats.len();
    let kept = select_beats(beats, cfg.min_corr)?;
    let mut waveforms = Vec::with_capacity(kept.len());
    let mut spans = Vec::with_capacity(kept.len());
    for b in kept {
        // Short fragments can survive selection only in degenerate recordings.
        match resample_beat(&b.samples) {
            Ok(w) => {
                waveforms.push(w);
                spans.push((b.start, b.end));
            }
            Err(Error::Input(_)) | Err(Error::Quality(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    if waveforms.len() < 3 {
        return Err(Error::Quality(format!(
            "only {} usable beats after resampling",
            waveforms.len()
        )));
    }
    Ok(ExtractedBeats {
        waveforms,
        spans,
        separated,
    })
}

/// One beat per line, comma-separated.
pub fn beats_to_csv(beats: &[BeatWaveform]) -> String {
    let mut out = String::new();
    for b in beats {
        let row: Vec<String> = b.samples().iter().map(|v| format!("{v:.9}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
