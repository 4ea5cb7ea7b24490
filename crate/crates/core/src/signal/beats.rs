use super::RawSignal;
use crate::error::{Error, Result};

/// One cycle between two consecutive valleys (both endpoints included).
#[derive(Debug, Clone, PartialEq)]
pub struct Beat {
    pub start: usize,
    pub end: usize,
    pub samples: Vec<f64>,
}

impl Beat {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationConfig {
    /// Valleys closer than this fraction of the estimated period are suppressed.
    pub spacing_factor: f64,
    /// Minimum normalized autocorrelation accepted as a heart-rate peak.
    pub min_autocorr: f64,
    pub min_bpm: f64,
    pub max_bpm: f64,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        Self {
            spacing_factor: 0.5,
            min_autocorr: 0.3,
            min_bpm: 40.0,
            max_bpm: 180.0,
        }
    }
}

/// Heart rate from the highest autocorrelation peak inside the allowed lag band.
pub fn estimate_heart_rate(sig: &RawSignal, cfg: &SeparationConfig) -> Result<f64> {
    period_from_autocorr(&sig.samples, sig.fs, cfg).map(|k| 60.0 * sig.fs / k as f64)
}

fn period_from_autocorr(x: &[f64], fs: f64, cfg: &SeparationConfig) -> Result<usize> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let energy: f64 = c.iter().map(|v| v * v).sum();
    if energy <= 1e-12 * n as f64 {
        return Err(Error::Quality("no periodicity: signal is flat".into()));
    }
    let lo = (fs * 60.0 / cfg.max_bpm).ceil() as usize;
    let hi = ((fs * 60.0 / cfg.min_bpm).floor() as usize).min(n.saturating_sub(2));
    if lo < 1 || hi <= lo {
        return Err(Error::Quality("no periodicity: signal too short for the lag band".into()));
    }
    let r = |k: usize| c[..n - k].iter().zip(&c[k..]).map(|(a, b)| a * b).sum::<f64>() / energy;
    let rs: Vec<f64> = (lo - 1..=hi + 1).map(r).collect();
    let mut best: Option<(usize, f64)> = None;
    for k in lo..=hi {
        let v = rs[k - lo + 1];
        if v >= rs[k - lo] && v >= rs[k - lo + 2] && best.is_none_or(|(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    match best {
        Some((k, v)) if v >= cfg.min_autocorr => Ok(k),
        _ => Err(Error::Quality("no periodicity: no autocorrelation peak in the 40–180 bpm band".into())),
    }
}

/// Beat period in samples around every position.
///
/// The estimate comes from 10 s windows with 50% overlap so the valley
/// spacing follows heart-rate changes within a recording; positions take
/// the period of the nearest window that shows periodicity.
pub fn local_periods(sig: &RawSignal, cfg: &SeparationConfig) -> Result<Vec<f64>> {
    let n = sig.samples.len();
    let win = ((10.0 * sig.fs) as usize).min(n);
    let hop = (win / 2).max(1);
    let mut centers = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + win).min(n);
        if let Ok(k) = period_from_autocorr(&sig.samples[start..end], sig.fs, cfg) {
            centers.push(((start + end) as f64 / 2.0, k as f64));
        }
        if end == n {
            break;
        }
        start = (start + hop).min(n - win);
    }
    if centers.is_empty() {
        return Err(Error::Quality("no periodicity: no autocorrelation peak in the 40–180 bpm band".into()));
    }
    Ok((0..n)
        .map(|i| {
            centers
                .iter()
                .min_by(|a, b| (a.0 - i as f64).abs().total_cmp(&(b.0 - i as f64).abs()))
                .unwrap()
                .1
        })
        .collect())
}

/// Splits a filtered PPG signal into valley-to-valley beats.
///
/// Systolic peaks are chosen highest-first among local maxima, at least
/// `spacing_factor` local periods apart, which discards dicrotic waves.
/// The valley of each cycle is the lowest sample between two consecutive
/// systolic peaks, so dicrotic notches never become boundaries.
pub fn separate_beats(sig: &RawSignal, cfg: &SeparationConfig) -> Result<Vec<Beat>> {
    if (sig.samples.len() as f64) < 3.0 * sig.fs {
        return Err(Error::Input("beat separation needs at least 3 s of signal".into()));
    }
    let periods = local_periods(sig, cfg)?;
    let x = &sig.samples;
    let spaced = |picked: &[usize], i: usize| {
        picked
            .iter()
            .all(|&v| (v as f64 - i as f64).abs() >= cfg.spacing_factor * periods[i].min(periods[v]))
    };

    let mut maxima: Vec<usize> = (1..x.len() - 1)
        .filter(|&i| x[i] > x[i - 1] && x[i] >= x[i + 1])
        .collect();
    maxima.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    let mut peaks: Vec<usize> = Vec::new();
    for i in maxima {
        if spaced(&peaks, i) {
            peaks.push(i);
        }
    }
    peaks.sort_unstable();

    let mut valleys: Vec<usize> = peaks
        .windows(2)
        .map(|w| {
            (w[0] + 1..w[1])
                .min_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)))
                .unwrap_or(w[0])
        })
        .filter(|&v| v > 0 && v + 1 < x.len() && x[v] < x[v - 1] && x[v] <= x[v + 1])
        .collect();
    // Enforce the minimum valley spacing, keeping the deeper valley.
    let mut order = valleys.clone();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for v in order {
        if spaced(&kept, v) {
            kept.push(v);
        }
    }
    kept.sort_unstable();
    valleys = kept;
    Ok(valleys
        .windows(2)
        .map(|w| Beat {
            start: w[0],
            end: w[1],
            samples: x[w[0]..=w[1]].to_vec(),
        })
        .collect())
}

fn resample_linear(x: &[f64], len: usize) -> Vec<f64> {
    let span = (x.len() - 1) as f64;
    (0..len)
        .map(|j| {
            let t = j as f64 * span / (len - 1) as f64;
            let i = (t.floor() as usize).min(x.len() - 2);
            let f = t - i as f64;
            x[i] * (1.0 - f) + x[i + 1] * f
        })
        .collect()
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub(crate) fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Keeps beats that correlate with the point-wise median template.
pub fn select_beats(beats: Vec<Beat>, min_corr: f64) -> Result<Vec<Beat>> {
    if beats.len() < 3 {
        return Err(Error::Quality(format!(
            "beat selection needs ≥ 3 beats, got {}",
            beats.len()
        )));
    }
    let mut lens: Vec<f64> = beats.iter().map(|b| b.len() as f64).collect();
    let ref_len = (median(&mut lens).round() as usize).max(2);
    let normalized: Vec<Vec<f64>> = beats
        .iter()
        .map(|b| resample_linear(&b.samples, ref_len))
        .collect();
    let template: Vec<f64> = (0..ref_len)
        .map(|i| median(&mut normalized.iter().map(|b| b[i]).collect::<Vec<_>>()))
        .collect();
    let kept: Vec<Beat> = beats
        .into_iter()
        .zip(&normalized)
        .filter(|(_, n)| pearson(n, &template) >= min_corr)
        .map(|(b, _)| b)
        .collect();
    if kept.len() < 3 {
        return Err(Error::Quality(format!(
            "only {} beats survived template correlation ≥ {min_corr}",
            kept.len()
        )));
    }
    Ok(kept)
}
