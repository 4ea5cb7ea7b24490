use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::PpgProfile;
use crate::error::{Error, Result};
use crate::signal::RawSignal;

/// A generated pulse signal and the exact cycle boundaries used to build it.
#[derive(Debug, Clone)]
pub struct BeatTrain {
    pub signal: RawSignal,
    /// The signal before baseline wander and additive noise.
    pub clean: Vec<f64>,
    /// Cycle start times in seconds that fall inside the recording.
    pub boundary_times: Vec<f64>,
    /// The same boundaries as nearest sample indices.
    pub boundaries: Vec<usize>,
}

fn gauss(p: f64, mu: f64, width: f64) -> f64 {
    let z = (p - mu) / width;
    (-0.5 * z * z).exp()
}

/// One cycle over phase `p ∈ [0, 1]`, zero at both ends.
///
/// Systolic and dicrotic Gaussians sit on a tent that rises steeply to the
/// systolic peak and decays slowly afterwards, so the cycle minimum is the
/// boundary itself. The chord through the Gaussian endpoint values is
/// removed so consecutive cycles join continuously.
pub fn cycle_shape(p: &PpgProfile, phase: f64) -> f64 {
    let g = |q: f64| {
        gauss(q, p.systolic_pos, p.systolic_width)
            + p.dicrotic_amp * gauss(q, p.dicrotic_pos, p.dicrotic_width)
    };
    let chord = (1.0 - phase) * g(0.0) + phase * g(1.0);
    let tent = if phase < p.systolic_pos {
        phase / p.systolic_pos
    } else {
        (1.0 - phase) / (1.0 - p.systolic_pos)
    };
    g(phase) - chord + p.decay * tent
}

/// Synthesizes a pulse signal at the profile's rate.
///
/// Cycle lengths jitter uniformly by up to `rate_jitter` (capped at 3%) and
/// cycle amplitudes by up to `amp_jitter`. The recording starts at a random
/// phase of the first cycle.
pub fn gen_beat_train(profile: &PpgProfile, duration_s: f64, fs: f64, seed: u64) -> Result<BeatTrain> {
    if !(duration_s >= 3.0) {
        return Err(Error::Input(format!("beat train needs ≥ 3 s, got {duration_s}")));
    }
    if !(fs > 0.0) {
        return Err(Error::Input(format!("invalid sampling rate {fs}")));
    }
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let period = 60.0 / profile.hr_bpm;
    let jitter = profile.rate_jitter.min(0.03);

    // Cycle start times covering [0, duration].
    let mut starts = vec![-rng.random_range(0.0..period)];
    let mut lengths = Vec::new();
    let mut amps = Vec::new();
    loop {
        let len = period * (1.0 + rng.random_range(-jitter..=jitter));
        lengths.push(len);
        amps.push(1.0 + rng.random_range(-profile.amp_jitter..=profile.amp_jitter));
        let next = starts[starts.len() - 1] + len;
        starts.push(next);
        if next > duration_s {
            break;
        }
    }
    let wander_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let n = (duration_s * fs).round() as usize;
    let noise = Normal::new(0.0, profile.noise_sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;

    let mut clean = Vec::with_capacity(n);
    let mut samples = Vec::with_capacity(n);
    let mut k = 0;
    for i in 0..n {
        let t = i as f64 / fs;
        while t >= starts[k + 1] {
            k += 1;
        }
        let phase = (t - starts[k]) / lengths[k];
        let v = amps[k] * cycle_shape(profile, phase);
        clean.push(v);
        let wander = profile.wander_amp * (std::f64::consts::TAU * 0.2 * t + wander_phase).sin();
        let eps = if profile.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        samples.push(v + wander + eps);
    }
    let boundary_times: Vec<f64> = starts
        .iter()
        .copied()
        .filter(|&t| t >= 0.0 && t < n as f64 / fs)
        .collect();
    let boundaries = boundary_times
        .iter()
        .map(|t| ((t * fs).round() as usize).min(n - 1))
        .collect();
    Ok(BeatTrain {
        signal: RawSignal { samples, fs },
        clean,
        boundary_times,
        boundaries,
    })
}
