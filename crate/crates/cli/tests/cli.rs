use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ppgfusion"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.conf");
    fs::write(&path, body).unwrap();
    path
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gradcheck_passes_on_tiny_model() {
    let o = run(&["gradcheck"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let err: f64 = text
        .split_whitespace()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or_else(|| panic!("unparsed: {text}"));
    assert!(err < 1e-4, "{text}");
}

#[test]
fn gradcheck_above_tolerance_exits_with_numeric_code() {
    let o = run(&["gradcheck", "--stencil", "two", "--step", "1e-9"]);
    assert_eq!(code(&o), 3, "{}", stdout(&o));
}

#[test]
fn unknown_flag_is_usage_error() {
    let o = run(&["gradcheck", "--bogus"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn missing_inputs_report_remedy() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope");
    let o = run(&["train", "--in", p(&missing), "--out", p(tmp.path()), "--target-user", "0"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("ppgfusion preprocess"), "{}", stderr(&o));
    let o = run(&["preprocess", "--in", p(&missing), "--out", p(tmp.path())]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("ppgfusion synth"), "{}", stderr(&o));
}

#[test]
fn bad_config_key_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "no_such_key = 1\n");
    let o = run(&["gradcheck", "--config", p(&cfg)]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let o = run(&["gradcheck", "--set", "epochs"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn synth_counts_and_zero_subjects() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "synth.subjects = 2\nsynth.recordings = 1\nsynth.duration = 10\nsynth.size = 32\n",
    );
    let out = tmp.path().join("data");
    let o = run(&["synth", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for s in ["subject_00", "subject_01"] {
        let frames = fs::read_dir(out.join(s).join("rec_00").join("frames")).unwrap().count();
        assert_eq!(frames, 600);
    }
    assert!(out.join("run_manifest.txt").is_file());

    let o = run(&["synth", "--config", p(&cfg), "--set", "synth.subjects=0", "--out", p(&tmp.path().join("none"))]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn synth_is_byte_identical_under_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "synth.subjects = 2\nsynth.recordings = 1\nsynth.duration = 3\nsynth.size = 32\n",
    );
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let o = run(&["synth", "--config", p(&cfg), "--seed", "11", "--out", p(d)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(files(&a), files(&b));
}

/// Small dataset, one recording flattened to a constant video.
fn prepared(tmp: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let cfg = write_config(
        tmp,
        "preset = desk\nepochs = 3\nsynth.subjects = 3\nsynth.recordings = 2\nsynth.duration = 20\n",
    );
    let data = tmp.join("data");
    let o = run(&["synth", "--config", p(&cfg), "--out", p(&data)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let frames = data.join("subject_02").join("rec_01").join("frames");
    for e in fs::read_dir(&frames).unwrap() {
        let path = e.unwrap().path();
        let bytes = fs::read(&path).unwrap();
        let header = b"P5\n128 128\n255\n";
        assert!(bytes.starts_with(header));
        let mut flat = header.to_vec();
        flat.resize(bytes.len(), 128);
        fs::write(&path, flat).unwrap();
    }
    let feat = tmp.join("feat");
    let o = run(&["preprocess", "--in", p(&data), "--out", p(&feat)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("subject_02/rec_01: failed"), "{}", stdout(&o));
    (cfg, data, feat)
}

#[test]
fn preprocess_train_evaluate_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, data, feat) = prepared(tmp.path());

    let again = tmp.path().join("feat2");
    let o = run(&["preprocess", "--in", p(&data), "--out", p(&again)]);
    assert_eq!(code(&o), 0);
    let strip = |v: Vec<(PathBuf, Vec<u8>)>| -> Vec<(PathBuf, Vec<u8>)> {
        v.into_iter().filter(|(f, _)| f != Path::new("run_manifest.txt")).collect()
    };
    assert_eq!(strip(files(&feat)), strip(files(&again)));

    let run_dir = tmp.path().join("run");
    let o = run(&[
        "train", "--config", p(&cfg), "--in", p(&feat), "--out", p(&run_dir), "--target-user", "0",
        "--set", "lambda_a=0", "--set", "lambda_s=0",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let log = fs::read_to_string(run_dir.join("losses.csv")).unwrap();
    for line in log.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert!(cols[2] > 0.0);
        assert_eq!((cols[3], cols[4]), (0.0, 0.0));
        assert_eq!(cols[5], cols[2]);
    }
    let manifest = fs::read_to_string(run_dir.join("run_manifest.txt")).unwrap();
    assert!(manifest.contains("command = train") && manifest.contains("lambda_a = 0"));

    let o = run(&["evaluate", "--in", p(&feat), "--run", p(&run_dir)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("EER"), "{}", stdout(&o));
    assert!(run_dir.join("eval").join("metrics.csv").is_file());
    assert!(run_dir.join("eval").join("roc.csv").is_file());

    let o = run(&["evaluate", "--in", p(&feat), "--run", p(&run_dir), "--config", p(&cfg)]);
    assert_eq!(code(&o), 1);

    let ab = tmp.path().join("ablate");
    let o = run(&[
        "ablate", "--config", p(&cfg), "--in", p(&feat), "--out", p(&ab), "--target-user", "1", "--set", "epochs=1",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = fs::read_to_string(ab.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 4, "{report}");
    for v in ["ppg", "fingerprint", "fused"] {
        assert!(report.contains(v), "{report}");
    }
}

#[test]
fn preprocess_fails_only_when_every_recording_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "synth.subjects = 1\nsynth.recordings = 1\nsynth.duration = 5\n");
    let data = tmp.path().join("data");
    assert_eq!(code(&run(&["synth", "--config", p(&cfg), "--out", p(&data)])), 0);
    let frames = data.join("subject_00").join("rec_00").join("frames");
    for e in fs::read_dir(&frames).unwrap() {
        let path = e.unwrap().path();
        let len = fs::read(&path).unwrap().len();
        let mut flat = b"P5\n128 128\n255\n".to_vec();
        flat.resize(len, 90);
        fs::write(&path, flat).unwrap();
    }
    let o = run(&["preprocess", "--in", p(&data), "--out", p(&tmp.path().join("feat"))]);
    assert_eq!(code(&o), 2, "{}", stdout(&o));
}
