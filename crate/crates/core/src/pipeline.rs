//! Recording-level preprocessing: video frames to paired beat waveforms and
//! beat-synchronized fingerprints, and their on-disk layout.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::formats::{parse_key_values, read_container, write_atomic, write_container};
use crate::image::{beat_synchronized_fingerprint, FingerprintConfig, FingerprintImage, FP_SIDE};
use crate::signal::{extract_beats, frame_mean_intensity, BeatWaveform, FrameStack, SignalConfig, BEAT_LEN};
use crate::synth::{gen_fingertip_video, population, read_recording, DatasetConfig};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PreprocessConfig {
    pub signal: SignalConfig,
    pub fingerprint: FingerprintConfig,
}

/// Beats and fingerprints from one recording; entry `i` of both lists comes
/// from the same frame span.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingFeatures {
    pub beats: Vec<BeatWaveform>,
    pub fingerprints: Vec<FingerprintImage>,
    pub spans: Vec<(usize, usize)>,
    /// Beats separated before template selection.
    pub found: usize,
}

/// Runs both pipelines on a frame stack.
pub fn preprocess_stack(stack: &FrameStack, cfg: &PreprocessConfig) -> Result<RecordingFeatures> {
    let raw = frame_mean_intensity(stack);
    let extracted = extract_beats(&raw, &cfg.signal)?;
    let fingerprints = extracted
        .spans
        .iter()
        .map(|&span| beat_synchronized_fingerprint(stack, span, &cfg.fingerprint))
        .collect::<Result<Vec<_>>>()?;
    Ok(RecordingFeatures {
        beats: extracted.waveforms,
        fingerprints,
        spans: extracted.spans,
        found: extracted.separated,
    })
}

/// Writes `beats.bin`, `fingerprints.bin` and `quality.txt`.
pub fn write_features(dir: &Path, f: &RecordingFeatures) -> Result<()> {
    let beats: Vec<(String, Tensor)> = f
        .beats
        .iter()
        .enumerate()
        .map(|(i, b)| Ok((format!("beat_{i:04}"), Tensor::new(&[BEAT_LEN], b.samples().to_vec())?)))
        .collect::<Result<_>>()?;
    write_container(&dir.join("beats.bin"), &beats)?;
    let fps: Vec<(String, Tensor)> = f
        .fingerprints
        .iter()
        .enumerate()
        .map(|(i, p)| Ok((format!("fp_{i:04}"), Tensor::new(&[FP_SIDE, FP_SIDE], p.pixels().to_vec())?)))
        .collect::<Result<_>>()?;
    write_container(&dir.join("fingerprints.bin"), &fps)?;
    let mut q = format!("status = ok\nfound = {}\nkept = {}\n", f.found, f.beats.len());
    let spans: Vec<String> = f.spans.iter().map(|(a, b)| format!("{a}-{b}")).collect();
    writeln!(q, "spans = {}", spans.join(" ")).unwrap();
    write_atomic(&dir.join("quality.txt"), q.as_bytes())
}

/// Reads features written by [`write_features`].
pub fn read_features(dir: &Path) -> Result<RecordingFeatures> {
    let beats = read_container(&dir.join("beats.bin"))?
        .into_iter()
        .map(|(_, t)| BeatWaveform::new(t.into_data()))
        .collect::<Result<Vec<_>>>()?;
    let fingerprints = read_container(&dir.join("fingerprints.bin"))?
        .into_iter()
        .map(|(_, t)| FingerprintImage::from_flat(t.into_data()))
        .collect::<Result<Vec<_>>>()?;
    let qpath = dir.join("quality.txt");
    let text = fs::read_to_string(&qpath).map_err(|e| Error::io(&qpath, e))?;
    let kv = parse_key_values(&text, &qpath)?;
    let get = |k: &str| kv.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
    let found = get("found")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::format(&qpath, "missing found count"))?;
    let spans = get("spans")
        .unwrap_or("")
        .split_whitespace()
        .map(|s| {
            let (a, b) = s.split_once('-').ok_or_else(|| Error::format(&qpath, "bad span"))?;
            Ok((
                a.parse().map_err(|_| Error::format(&qpath, "bad span"))?,
                b.parse().map_err(|_| Error::format(&qpath, "bad span"))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    if beats.len() != fingerprints.len() {
        return Err(Error::format(dir, "beat and fingerprint counts differ"));
    }
    Ok(RecordingFeatures {
        beats,
        fingerprints,
        spans,
        found,
    })
}

/// Outcome of preprocessing one recording directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingReport {
    pub subject: usize,
    pub recording: usize,
    pub rel_path: PathBuf,
    pub outcome: std::result::Result<(usize, usize), String>,
}

/// Recording directories (`subject_XX/rec_XX`) under a dataset root, sorted.
pub fn recording_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut subjects: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("subject_")))
        .collect();
    subjects.sort();
    for s in subjects {
        let mut recs: Vec<PathBuf> = fs::read_dir(&s)
            .map_err(|e| Error::io(&s, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("rec_")))
            .collect();
        recs.sort();
        out.extend(recs);
    }
    Ok(out)
}

/// Preprocesses every recording under `in_dir` into the mirrored layout under
/// `out_dir`. Quality failures are recorded per recording; the call fails
/// only if no recording succeeds.
pub fn preprocess_dataset(in_dir: &Path, out_dir: &Path, cfg: &PreprocessConfig) -> Result<Vec<RecordingReport>> {
    let dirs = recording_dirs(in_dir)?;
    if dirs.is_empty() {
        return Err(Error::Data(format!("no subject_*/rec_* recordings under {}", in_dir.display())));
    }
    let mut reports = Vec::new();
    for dir in dirs {
        let rel = dir.strip_prefix(in_dir).unwrap_or(&dir).to_path_buf();
        let (stack, manifest) = read_recording(&dir)?;
        let target = out_dir.join(&rel);
        fs::create_dir_all(&target).map_err(|e| Error::io(&target, e))?;
        let outcome = match preprocess_stack(&stack, cfg) {
            Ok(f) => {
                write_features(&target, &f)?;
                Ok((f.found, f.beats.len()))
            }
            Err(e @ (Error::Quality(_) | Error::Input(_))) => {
                let msg = e.to_string();
                for stale in ["beats.bin", "fingerprints.bin"] {
                    let _ = fs::remove_file(target.join(stale));
                }
                write_atomic(
                    &target.join("quality.txt"),
                    format!("status = failed\nreason = {}\n", msg.replace('#', "")).as_bytes(),
                )?;
                Err(msg)
            }
            Err(e) => return Err(e),
        };
        reports.push(RecordingReport {
            subject: manifest.subject,
            recording: manifest.recording,
            rel_path: rel,
            outcome,
        });
    }
    if reports.iter().all(|r| r.outcome.is_err()) {
        let first = reports[0].outcome.clone().unwrap_err();
        return Err(Error::Quality(format!("every recording failed preprocessing; first: {first}")));
    }
    let mut summary = String::from("subject,recording,status,found,kept\n");
    for r in &reports {
        match &r.outcome {
            Ok((f, k)) => writeln!(summary, "{},{},ok,{f},{k}", r.subject, r.recording).unwrap(),
            Err(_) => writeln!(summary, "{},{},failed,0,0", r.subject, r.recording).unwrap(),
        }
    }
    write_atomic(&out_dir.join("quality.csv"), summary.as_bytes())?;
    Ok(reports)
}

/// All successfully preprocessed recordings of one subject.
#[derive(Debug, Clone)]
pub struct SubjectData {
    pub subject: usize,
    pub recordings: Vec<RecordingFeatures>,
}

/// Generates and preprocesses a synthetic dataset in memory, giving the
/// same features as `write_dataset` followed by [`preprocess_dataset`] and
/// [`load_features`] when every recording passes.
pub fn synthesize_features(data: &DatasetConfig, cfg: &PreprocessConfig) -> Result<Vec<SubjectData>> {
    if data.subjects == 0 || data.recordings == 0 {
        return Err(Error::Config("dataset needs at least one subject and one recording".into()));
    }
    population(data.subjects, data.separability, data.seed)
        .iter()
        .map(|p| {
            let recordings = (0..data.recordings)
                .map(|r| preprocess_stack(&gen_fingertip_video(p, r, &data.video)?.stack, cfg))
                .collect::<Result<_>>()?;
            Ok(SubjectData {
                subject: p.id,
                recordings,
            })
        })
        .collect()
}

/// Loads every preprocessed recording under `dir`, grouped by subject.
pub fn load_features(dir: &Path) -> Result<Vec<SubjectData>> {
    let mut out: Vec<SubjectData> = Vec::new();
    for rec in recording_dirs(dir)? {
        if !rec.join("beats.bin").exists() {
            continue;
        }
        let name = rec
            .parent()
            .and_then(|p| p.file_name())
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_default();
        let subject: usize = name
            .trim_start_matches("subject_")
            .parse()
            .map_err(|_| Error::format(&rec, "subject directory name is not subject_<n>"))?;
        let features = read_features(&rec)?;
        match out.iter_mut().find(|s| s.subject == subject) {
            Some(s) => s.recordings.push(features),
            None => out.push(SubjectData {
                subject,
                recordings: vec![features],
            }),
        }
    }
    if out.is_empty() {
        return Err(Error::Data(format!(
            "no preprocessed recordings under {}; run preprocess first",
            dir.display()
        )));
    }
    Ok(out)
}
