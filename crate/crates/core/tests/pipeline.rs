use ppgfusion::image::{canny, Thresholds};
use ppgfusion::pipeline::{load_features, preprocess_dataset, preprocess_stack, synthesize_features, PreprocessConfig};
use ppgfusion::signal::{
    detrend, extract_beats, frame_mean_intensity, lowpass, separate_beats, RawSignal, SeparationConfig,
    SignalConfig, BEAT_LEN,
};
use ppgfusion::synth::{
    clean_fingerprint, gen_beat_train, gen_fingertip_video, gen_ridge_image, subject_profile, write_dataset,
    DatasetConfig, Placement, PpgProfile, RidgeProfile, VideoConfig,
};
use ppgfusion::Error;

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn filtered(sig: &RawSignal) -> RawSignal {
    lowpass(&detrend(sig, 2.0).unwrap(), 4.0).unwrap()
}

#[test]
fn beat_count_at_72_bpm() {
    let p = PpgProfile::default();
    for seed in 0..5 {
        let bt = gen_beat_train(&p, 30.0, 60.0, seed).unwrap();
        let beats = separate_beats(&filtered(&bt.signal), &SeparationConfig::default()).unwrap();
        assert!((34..=36).contains(&beats.len()), "seed {seed}: {} beats", beats.len());
    }
}

#[test]
fn boundaries_follow_rate_changes() {
    let slow = PpgProfile {
        hr_bpm: 60.0,
        ..PpgProfile::default()
    };
    let fast = PpgProfile {
        hr_bpm: 90.0,
        ..PpgProfile::default()
    };
    let a = gen_beat_train(&slow, 15.0, 60.0, 3).unwrap();
    let b = gen_beat_train(&fast, 15.0, 60.0, 4).unwrap();
    // Join at a true boundary of each train so the seam is a valley.
    let cut_a = *a.boundaries.last().unwrap();
    let start_b = b.boundaries[0];
    let offset = b.signal.samples[start_b] - a.signal.samples[cut_a];
    let mut samples = a.signal.samples[..cut_a].to_vec();
    samples.extend(b.signal.samples[start_b..].iter().map(|v| v - offset));
    let mut truth: Vec<usize> = a.boundaries.clone();
    truth.extend(b.boundaries[1..].iter().map(|i| i - start_b + cut_a));
    let sig = RawSignal { samples, fs: 60.0 };
    let beats = separate_beats(&filtered(&sig), &SeparationConfig::default()).unwrap();
    let found: Vec<usize> = beats.iter().map(|b| b.start).chain(beats.last().map(|b| b.end)).collect();
    let hits = truth
        .iter()
        .filter(|&&t| found.iter().any(|&f| (f as isize - t as isize).abs() <= 3))
        .count();
    let frac = hits as f64 / truth.len() as f64;
    assert!(frac >= 0.9, "{hits}/{} boundaries matched", truth.len());
}

#[test]
fn canny_edge_density_on_ridges() {
    let p = RidgeProfile {
        theta: 0.0,
        period_px: 8.0,
        curv_a: 0.0,
        curv_b: 0.0,
        ..RidgeProfile::default()
    };
    let r = gen_ridge_image(&p, 128, &Placement::default()).unwrap();
    let e = canny(&r.image, Thresholds::default()).unwrap();
    // Count rising edges along interior rows; expect two per period.
    let mut total = 0.0;
    let rows = 16..112;
    for y in rows.clone() {
        let row = &e.pixels()[y * 128..(y + 1) * 128];
        total += row[8..120].windows(2).filter(|w| w[0] == 0 && w[1] == 1).count() as f64;
    }
    let per_period = total / rows.len() as f64 / (112.0 / 8.0);
    assert!((per_period - 2.0).abs() <= 0.6, "{per_period} edges per period");
}

#[test]
fn constant_signal_reports_no_periodicity() {
    let sig = RawSignal {
        samples: vec![100.0; 1800],
        fs: 60.0,
    };
    let err = extract_beats(&sig, &SignalConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Quality(ref m) if m.contains("no periodicity")), "{err}");
}

#[test]
fn video_to_features() {
    let mut subject = subject_profile(0, 1.0, 7);
    subject.ppg.hr_bpm = 72.0;
    let cfg = VideoConfig {
        hr_drift: 0.0,
        ..VideoConfig::default()
    };
    let video = gen_fingertip_video(&subject, 0, &cfg).unwrap();
    let truth = video.beats.boundaries.len() - 1;
    let f = preprocess_stack(&video.stack, &PreprocessConfig::default()).unwrap();
    assert!(f.beats.len() as f64 >= 0.8 * truth as f64);
    assert!(f.beats.len() >= 28);
    assert_eq!(f.beats.len(), f.fingerprints.len());
    for b in &f.beats {
        assert_eq!(b.samples().len(), BEAT_LEN);
        assert!(b.samples().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let clean = clean_fingerprint(&video.ridge.edges).unwrap();
    let r: Vec<f64> = f.fingerprints.iter().map(|fp| pearson(fp.pixels(), clean.pixels())).collect();
    assert!(r.iter().all(|&c| c >= 0.5));
}

#[test]
fn zero_modulation_has_no_periodicity() {
    let subject = subject_profile(1, 1.0, 7);
    let cfg = VideoConfig {
        duration_s: 10.0,
        size: 32,
        modulation_depth: 0.0,
        pixel_noise: 0.0,
        ..VideoConfig::default()
    };
    let video = gen_fingertip_video(&subject, 0, &cfg).unwrap();
    let raw = frame_mean_intensity(&video.stack);
    let err = extract_beats(&raw, &SignalConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Quality(_)), "{err}");
}

#[test]
fn mean_intensity_tracks_pulse_within_quantization() {
    let mut subject = subject_profile(2, 1.0, 7);
    subject.ridge.amplitude = 0.0;
    let cfg = VideoConfig {
        duration_s: 5.0,
        size: 32,
        pixel_noise: 0.0,
        ..VideoConfig::default()
    };
    let video = gen_fingertip_video(&subject, 0, &cfg).unwrap();
    let raw = frame_mean_intensity(&video.stack);
    let s = &video.beats.signal.samples;
    let (lo, hi) = s.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let base = subject.ridge.base;
    for (got, v) in raw.samples.iter().zip(s) {
        let expected = base * (1.0 - cfg.modulation_depth * (1.0 - (v - lo) / (hi - lo)));
        assert!((got - expected).abs() <= 0.5, "{got} vs {expected}");
    }
}

#[test]
fn in_memory_features_match_disk_round_trip() {
    let data = DatasetConfig {
        subjects: 2,
        recordings: 1,
        video: VideoConfig {
            duration_s: 8.0,
            ..VideoConfig::default()
        },
        ..DatasetConfig::default()
    };
    let cfg = PreprocessConfig::default();
    let tmp = tempfile::tempdir().unwrap();
    let (raw, feat) = (tmp.path().join("raw"), tmp.path().join("feat"));
    write_dataset(&raw, &data).unwrap();
    let reports = preprocess_dataset(&raw, &feat, &cfg).unwrap();
    assert!(reports.iter().all(|r| r.outcome.is_ok()));
    let disk = load_features(&feat).unwrap();
    let memory = synthesize_features(&data, &cfg).unwrap();
    assert_eq!(disk.len(), memory.len());
    for (d, m) in disk.iter().zip(&memory) {
        assert_eq!(d.subject, m.subject);
        for (a, b) in d.recordings.iter().zip(&m.recordings) {
            assert_eq!(a.beats, b.beats);
            assert_eq!(a.fingerprints, b.fingerprints);
            assert_eq!(a.spans, b.spans);
        }
    }
}
