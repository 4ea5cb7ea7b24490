use std::f64::consts::PI;

use super::RawSignal;
use crate::error::{Error, Result};

/// Subtracts a centered, triangularly weighted moving average spanning
/// `window_s` seconds. Near the ends the window is truncated and the
/// remaining weights renormalized.
///
/// Triangular weights (a boxcar convolved with itself) keep the baseline
/// estimate out of the cardiac band: a plain 2 s boxcar still passes about
/// 13% of a 1.2 Hz pulse into the trend.
pub fn detrend(sig: &RawSignal, window_s: f64) -> Result<RawSignal> {
    let span = window_s * sig.fs;
    if !(span >= 3.0) {
        return Err(Error::Config(format!(
            "detrend window of {window_s} s at {} Hz covers fewer than 3 samples",
            sig.fs
        )));
    }
    let half = ((span - 1.0) / 2.0).round().max(1.0) as isize;
    let x = &sig.samples;
    let n = x.len() as isize;
    let mut out = Vec::with_capacity(x.len());
    for i in 0..n {
        let lo = (i - half).max(0);
        let hi = (i + half).min(n - 1);
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for j in lo..=hi {
            let w = (half + 1 - (j - i).abs()) as f64;
            acc += w * x[j as usize];
            wsum += w;
        }
        out.push(x[i as usize] - acc / wsum);
    }
    Ok(RawSignal {
        samples: out,
        fs: sig.fs,
    })
}

/// Hamming-windowed sinc low-pass taps with unit DC gain.
///
/// The tap count is `⌈4·fs/cutoff⌉`, bumped to the next odd number so the
/// filter has an integer center.
pub fn lowpass_taps(fs: f64, cutoff_hz: f64) -> Result<Vec<f64>> {
    if !(cutoff_hz > 0.0) || cutoff_hz >= fs / 2.0 {
        return Err(Error::Config(format!(
            "cutoff {cutoff_hz} Hz must lie in (0, {}) for fs = {fs} Hz",
            fs / 2.0
        )));
    }
    let mut n = (4.0 * fs / cutoff_hz).ceil() as usize;
    if n.is_multiple_of(2) {
        n += 1;
    }
    let m = (n - 1) as f64 / 2.0;
    let fc = cutoff_hz / fs;
    let mut taps: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 - m;
            let sinc = if t == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * t).sin() / (PI * t)
            };
            let w = 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos();
            sinc * w
        })
        .collect();
    let s: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= s;
    }
    Ok(taps)
}

/// Zero-phase low-pass: the FIR is applied forward and then backward over
/// an odd-reflection padded copy of the signal.
pub fn lowpass(sig: &RawSignal, cutoff_hz: f64) -> Result<RawSignal> {
    let taps = lowpass_taps(sig.fs, cutoff_hz)?;
    let n = sig.samples.len();
    if n < taps.len() {
        return Err(Error::Input(format!(
            "signal of {n} samples is shorter than the {}-tap filter",
            taps.len()
        )));
    }
    let pad = (3 * taps.len()).min(n - 1);
    let x = &sig.samples;
    let mut padded = Vec::with_capacity(n + 2 * pad);
    padded.extend((1..=pad).rev().map(|j| 2.0 * x[0] - x[j]));
    padded.extend_from_slice(x);
    padded.extend((1..=pad).map(|j| 2.0 * x[n - 1] - x[n - 1 - j]));

    let once = convolve_causal(&padded, &taps);
    let mut rev: Vec<f64> = once.into_iter().rev().collect();
    rev = convolve_causal(&rev, &taps);
    rev.reverse();
    Ok(RawSignal {
        samples: rev[pad..pad + n].to_vec(),
        fs: sig.fs,
    })
}

/// Causal FIR over a signal; the leading group delay is removed so the
/// output stays aligned for symmetric taps run in both directions.
fn convolve_causal(x: &[f64], taps: &[f64]) -> Vec<f64> {
    let half = (taps.len() - 1) / 2;
    let n = x.len() as isize;
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (k, &h) in taps.iter().enumerate() {
                let j = i + half as isize - k as isize;
                if (0..n).contains(&j) {
                    acc += h * x[j as usize];
                }
            }
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, fs: f64, secs: f64, phase: f64) -> RawSignal {
        let n = (fs * secs) as usize;
        RawSignal {
            samples: (0..n)
                .map(|i| (2.0 * PI * freq * i as f64 / fs + phase).sin())
                .collect(),
            fs,
        }
    }

    /// Peak amplitude over the middle half, clear of edge transients.
    fn interior_amplitude(x: &[f64]) -> f64 {
        let n = x.len();
        x[n / 4..3 * n / 4].iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn detrend_line_and_constant() {
        let ramp = RawSignal {
            samples: (0..600).map(|i| 0.3 * i as f64 - 7.0).collect(),
            fs: 60.0,
        };
        let out = detrend(&ramp, 2.0).unwrap();
        for v in &out.samples[70..530] {
            assert!(v.abs() < 1e-9);
        }
        let flat = RawSignal {
            samples: vec![42.0; 300],
            fs: 60.0,
        };
        assert!(detrend(&flat, 2.0).unwrap().samples.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn detrend_keeps_cardiac_band() {
        let s = sine(1.2, 60.0, 20.0, 0.3);
        let out = detrend(&s, 2.0).unwrap();
        assert!(interior_amplitude(&out.samples) >= 0.9);
    }

    #[test]
    fn detrend_rejects_short_window() {
        let s = sine(1.0, 1.0, 20.0, 0.0);
        assert!(matches!(detrend(&s, 2.0), Err(Error::Config(_))));
    }

    #[test]
    fn tap_count_and_dc_gain() {
        let taps = lowpass_taps(60.0, 4.0).unwrap();
        assert_eq!(taps.len(), 61);
        assert!((taps.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let dc = RawSignal {
            samples: vec![3.5; 400],
            fs: 60.0,
        };
        for v in lowpass(&dc, 4.0).unwrap().samples {
            assert!((v - 3.5).abs() < 1e-3 * 3.5);
        }
    }

    #[test]
    fn passband_and_stopband_gain() {
        let pass = lowpass(&sine(1.2, 60.0, 30.0, 0.1), 4.0).unwrap();
        assert!(interior_amplitude(&pass.samples) >= 0.95);
        let stop = lowpass(&sine(10.0, 60.0, 30.0, 0.1), 4.0).unwrap();
        assert!(interior_amplitude(&stop.samples) <= 0.10);
    }

    #[test]
    fn rejects_cutoff_at_nyquist() {
        assert!(matches!(lowpass_taps(60.0, 30.0), Err(Error::Config(_))));
    }

    #[test]
    fn zero_phase_peak_alignment() {
        let s = sine(1.0, 60.0, 20.0, 0.0);
        let out = lowpass(&s, 4.0).unwrap();
        // Peaks of the input sit at 15 + 60k samples.
        for k in 3..17 {
            let c = 15 + 60 * k;
            let win = &out.samples[c - 10..=c + 10];
            let arg = win
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(arg, 10, "peak near {c} moved");
        }
    }
}
