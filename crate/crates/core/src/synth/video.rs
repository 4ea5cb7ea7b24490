use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{derive_seed, gen_beat_train, gen_ridge_image, population, BeatTrain, Placement, RidgeImage, SubjectProfile};
use crate::error::{Error, Result};
use crate::formats::{decode_pgm, encode_pgm, parse_key_values, write_atomic};
use crate::image::GrayImage;
use crate::signal::FrameStack;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VideoConfig {
    pub duration_s: f64,
    pub fps: f64,
    pub size: usize,
    /// Frames are scaled by a factor in `[1 − depth, 1]` following the pulse.
    pub modulation_depth: f64,
    pub pixel_noise: f64,
    /// Relative heart-rate change between recordings of one subject.
    pub hr_drift: f64,
    pub max_rotation_deg: f64,
    pub max_shift_px: f64,
}

impl Default for VideoConfig {
    fn default() -> Self {
        Self {
            duration_s: 30.0,
            fps: 60.0,
            size: 128,
            modulation_depth: 0.3,
            pixel_noise: 2.0,
            hr_drift: 0.05,
            max_rotation_deg: 4.0,
            max_shift_px: 3.0,
        }
    }
}

/// A generated recording with its ground truth.
#[derive(Debug, Clone)]
pub struct FingertipVideo {
    pub stack: FrameStack,
    pub beats: BeatTrain,
    pub ridge: RidgeImage,
    pub placement: Placement,
    pub seed: u64,
}

/// Renders recording `recording` of a subject.
///
/// Each frame is the subject's ridge image scaled by `1 − depth·(1 − n_t)`,
/// where `n_t` is the recording's pulse signal mapped to `[0, 1]`, plus
/// Gaussian pixel noise, rounded to 8 bits.
pub fn gen_fingertip_video(subject: &SubjectProfile, recording: usize, cfg: &VideoConfig) -> Result<FingertipVideo> {
    let seed = derive_seed(subject.seed, 3, recording as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ppg = subject.ppg;
    ppg.hr_bpm = (ppg.hr_bpm * (1.0 + rng.random_range(-1.0..=1.0) * cfg.hr_drift)).clamp(40.0, 180.0);
    let placement = Placement {
        rotation: rng.random_range(-1.0..=1.0) * cfg.max_rotation_deg.to_radians(),
        dx: rng.random_range(-1.0..=1.0) * cfg.max_shift_px,
        dy: rng.random_range(-1.0..=1.0) * cfg.max_shift_px,
    };
    let beats = gen_beat_train(&ppg, cfg.duration_s, cfg.fps, rng.random())?;
    let ridge = gen_ridge_image(&subject.ridge, cfg.size, &placement)?;

    let s = &beats.signal.samples;
    let (lo, hi) = s
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let noise = Normal::new(0.0, cfg.pixel_noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut frames = Vec::with_capacity(s.len());
    for &v in s {
        let level = if hi > lo { (v - lo) / (hi - lo) } else { 1.0 };
        let m = 1.0 - cfg.modulation_depth * (1.0 - level);
        let px = ridge
            .intensity
            .iter()
            .map(|&i| {
                let e = if cfg.pixel_noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                (i * m + e).round().clamp(0.0, 255.0) as u8
            })
            .collect();
        frames.push(GrayImage::new(cfg.size, cfg.size, px)?);
    }
    Ok(FingertipVideo {
        stack: FrameStack::new(frames, cfg.fps)?,
        beats,
        ridge,
        placement,
        seed,
    })
}

/// Metadata stored next to a recording's frames.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingManifest {
    pub subject: usize,
    pub recording: usize,
    pub fps: f64,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

fn frame_name(i: usize) -> String {
    format!("frame_{i:05}.pgm")
}

/// Writes `frames/`, `manifest.txt` and ground-truth CSVs under `dir`.
pub fn write_recording(dir: &Path, subject: usize, recording: usize, video: &FingertipVideo) -> Result<()> {
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    for (i, f) in video.stack.frames().iter().enumerate() {
        write_atomic(&frames_dir.join(frame_name(i)), &encode_pgm(f.width(), f.height(), f.pixels()))?;
    }
    let first = &video.stack.frames()[0];
    let manifest = format!(
        "subject = {subject}\nrecording = {recording}\nfps = {}\nframes = {}\nwidth = {}\nheight = {}\nseed = {}\n",
        video.stack.fps(),
        video.stack.len(),
        first.width(),
        first.height(),
        video.seed
    );
    write_atomic(&dir.join("manifest.txt"), manifest.as_bytes())?;

    let gt = dir.join("ground_truth");
    let mut sig = String::from("sample,clean,observed\n");
    for (i, (c, o)) in video.beats.clean.iter().zip(&video.beats.signal.samples).enumerate() {
        writeln!(sig, "{i},{c},{o}").unwrap();
    }
    write_atomic(&gt.join("signal.csv"), sig.as_bytes())?;
    let mut b = String::from("time_s,sample\n");
    for (t, i) in video.beats.boundary_times.iter().zip(&video.beats.boundaries) {
        writeln!(b, "{t},{i}").unwrap();
    }
    write_atomic(&gt.join("boundaries.csv"), b.as_bytes())?;
    let e = &video.ridge.edges;
    let px: Vec<u8> = e.pixels().iter().map(|&v| v * 255).collect();
    write_atomic(&gt.join("edges.pgm"), &encode_pgm(e.width(), e.height(), &px))
}

fn field<T: std::str::FromStr>(kv: &[(String, String)], key: &str, path: &Path) -> Result<T> {
    kv.iter()
        .find(|(k, _)| k == key)
        .ok_or_else(|| Error::format(path, format!("missing key {key}")))?
        .1
        .parse()
        .map_err(|_| Error::format(path, format!("bad value for {key}")))
}

/// Loads a recording written by [`write_recording`].
pub fn read_recording(dir: &Path) -> Result<(FrameStack, RecordingManifest)> {
    let mpath = dir.join("manifest.txt");
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let kv = parse_key_values(&text, &mpath)?;
    let manifest = RecordingManifest {
        subject: field(&kv, "subject", &mpath)?,
        recording: field(&kv, "recording", &mpath)?,
        fps: field(&kv, "fps", &mpath)?,
        frames: field(&kv, "frames", &mpath)?,
        width: field(&kv, "width", &mpath)?,
        height: field(&kv, "height", &mpath)?,
        seed: field(&kv, "seed", &mpath)?,
    };
    let mut frames = Vec::with_capacity(manifest.frames);
    for i in 0..manifest.frames {
        let p = dir.join("frames").join(frame_name(i));
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        let (w, h, px) = decode_pgm(&bytes, &p)?;
        frames.push(GrayImage::new(w, h, px)?);
    }
    Ok((FrameStack::new(frames, manifest.fps)?, manifest))
}

/// Population-level generation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetConfig {
    pub subjects: usize,
    pub recordings: usize,
    pub separability: f64,
    pub seed: u64,
    pub video: VideoConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            subjects: 8,
            recordings: 2,
            separability: 1.0,
            seed: 7,
            video: VideoConfig::default(),
        }
    }
}

/// Writes `subject_XX/rec_XX/` directories plus a top-level `manifest.txt`.
/// Returns the recording directories in generation order.
pub fn write_dataset(root: &Path, cfg: &DatasetConfig) -> Result<Vec<PathBuf>> {
    if cfg.subjects == 0 || cfg.recordings == 0 {
        return Err(Error::Config("dataset needs at least one subject and one recording".into()));
    }
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for subject in population(cfg.subjects, cfg.separability, cfg.seed) {
        for r in 0..cfg.recordings {
            let dir = root.join(format!("subject_{:02}", subject.id)).join(format!("rec_{r:02}"));
            let video = gen_fingertip_video(&subject, r, &cfg.video)?;
            write_recording(&dir, subject.id, r, &video)?;
            dirs.push(dir);
        }
    }
    let v = &cfg.video;
    let manifest = format!(
        "subjects = {}\nrecordings = {}\nseparability = {}\nseed = {}\nduration_s = {}\nfps = {}\nsize = {}\nmodulation_depth = {}\npixel_noise = {}\n",
        cfg.subjects, cfg.recordings, cfg.separability, cfg.seed, v.duration_s, v.fps, v.size, v.modulation_depth, v.pixel_noise
    );
    write_atomic(&root.join("manifest.txt"), manifest.as_bytes())?;
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{frame_mean_intensity, pearson};
    use crate::synth::{subject_profile, RidgeProfile};

    fn short() -> VideoConfig {
        VideoConfig {
            duration_s: 4.0,
            size: 48,
            ..VideoConfig::default()
        }
    }

    #[test]
    fn flat_ridges_recover_pulse() {
        let mut s = subject_profile(0, 1.0, 1);
        s.ridge = RidgeProfile {
            amplitude: 0.0,
            ..s.ridge
        };
        let cfg = VideoConfig {
            duration_s: 10.0,
            size: 32,
            ..VideoConfig::default()
        };
        let v = gen_fingertip_video(&s, 0, &cfg).unwrap();
        let sig = frame_mean_intensity(&v.stack);
        assert!(pearson(&sig.samples, &v.beats.signal.samples) >= 0.99);
    }

    #[test]
    fn recording_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let s = subject_profile(1, 1.0, 1);
        let v = gen_fingertip_video(&s, 0, &short()).unwrap();
        write_recording(dir.path(), 1, 0, &v).unwrap();
        let (stack, m) = read_recording(dir.path()).unwrap();
        assert_eq!(m.frames, 240);
        assert_eq!(m.subject, 1);
        assert_eq!(stack.frames(), v.stack.frames());
    }

    #[test]
    fn generation_is_deterministic() {
        let s = subject_profile(2, 1.0, 4);
        let a = gen_fingertip_video(&s, 1, &short()).unwrap();
        let b = gen_fingertip_video(&s, 1, &short()).unwrap();
        assert_eq!(a.stack.frames(), b.stack.frames());
        let c = gen_fingertip_video(&s, 0, &short()).unwrap();
        assert_ne!(a.stack.frames(), c.stack.frames());
    }
}
