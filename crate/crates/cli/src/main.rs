use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ppgfusion::config::RunConfig;
use ppgfusion::diff::Stencil;
use ppgfusion::eval::{ablation_run, evaluate, results_csv, report_csv, report_summary, roc, roc_csv, score_pairs};
use ppgfusion::formats::write_atomic;
use ppgfusion::model::{load_checkpoint, save_checkpoint, Variant};
use ppgfusion::pipeline::{load_features, preprocess_dataset, PreprocessConfig};
use ppgfusion::synth::{derive_seed, write_dataset};
use ppgfusion::trainer::{
    collect_items, gradcheck_tiny, split, train, validation_pairs, write_logs, Split, TrainConfig, GRADCHECK_STEP,
};
use ppgfusion::Error;

/// Camera PPG and fingerprint authentication pipeline.
#[derive(Debug, Parser)]
#[command(name = "ppgfusion", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides one config key, e.g. `--set lambda_a=0`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic fingertip-video dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract beats and fingerprints from every recording.
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one user's authenticator.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        target_user: usize,
        #[arg(long, value_parser = ["ppg", "fingerprint", "fused"])]
        variant: Option<String>,
    },
    /// Score a trained authenticator on its validation split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        /// Directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        /// Defaults to `RUN/eval`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and compare the ppg, fingerprint and fused variants.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to every user.
        #[arg(long)]
        target_user: Option<usize>,
    },
    /// Compare analytic and central-difference gradients on a tiny model.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Finite-difference step.
        #[arg(long, default_value_t = GRADCHECK_STEP)]
        step: f64,
        /// Central-difference stencil.
        #[arg(long, default_value = "four", value_parser = ["two", "four"])]
        stencil: String,
    },
}

const GRADCHECK_TOLERANCE: f64 = 1e-4;

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type Outcome = Result<(), Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) if !p.is_file() => {
            return Err(Failure::Usage(format!(
                "config file {} does not exist; pass an existing --config or omit it for defaults",
                p.display()
            )))
        }
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        let Some((k, v)) = o.split_once('=') else {
            return Err(Failure::Usage(format!("--set expects KEY=VALUE, got `{o}`")));
        };
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = common.seed {
        cfg.train.seed = s;
        cfg.synth.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn require_dir(p: &Path, what: &str, remedy: &str) -> Outcome {
    if p.is_dir() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} {} not found; {remedy}", p.display())))
    }
}

fn create_dir(p: &Path) -> Outcome {
    std::fs::create_dir_all(p).map_err(|e| Failure::Lib(Error::io(p, e)))
}

/// Config snapshot, version and seed of a run.
fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, extra: &[(&str, String)]) -> Outcome {
    let mut s = String::new();
    let _ = writeln!(s, "# ppgfusion run manifest");
    let _ = writeln!(s, "command = {command}");
    let _ = writeln!(s, "version = {}", env!("CARGO_PKG_VERSION"));
    for (k, v) in extra {
        let _ = writeln!(s, "{k} = {v}");
    }
    let _ = writeln!(s, "# config");
    s.push_str(&cfg.to_text());
    write_atomic(&dir.join("run_manifest.txt"), s.as_bytes())?;
    Ok(())
}

const FEATURES_REMEDY: &str = "run `ppgfusion preprocess --in DATASET --out FEATURES` first";

fn load_split(input: &Path, cfg: &RunConfig) -> Result<Split, Failure> {
    require_dir(input, "feature directory", FEATURES_REMEDY)?;
    let users = collect_items(&load_features(input)?);
    Ok(split(&users, cfg.split_mode(), cfg.train.seed)?)
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Synth { common, out } => {
            let cfg = load_config(&common)?;
            let dirs = write_dataset(&out, &cfg.synth)?;
            write_manifest(&out, "synth", &cfg, &[("seed", cfg.synth.seed.to_string())])?;
            println!("wrote {} recordings under {}", dirs.len(), out.display());
        }
        Command::Preprocess { common, input, out } => {
            let cfg = load_config(&common)?;
            require_dir(&input, "dataset directory", "run `ppgfusion synth --out DATASET` first")?;
            let reports = preprocess_dataset(&input, &out, &PreprocessConfig::default())?;
            let mut ok = 0;
            for r in &reports {
                match &r.outcome {
                    Ok((found, kept)) => {
                        ok += 1;
                        println!("{}: {kept} of {found} beats kept", r.rel_path.display());
                    }
                    Err(msg) => println!("{}: failed: {msg}", r.rel_path.display()),
                }
            }
            write_manifest(&out, "preprocess", &cfg, &[("input", input.display().to_string())])?;
            if ok == 0 {
                return Err(Failure::Lib(Error::Quality("every recording failed preprocessing".into())));
            }
        }
        Command::Train {
            common,
            input,
            out,
            target_user,
            variant,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(v) = variant {
                cfg.train.model.variant = Variant::parse(&v)?;
            }
            cfg.validate()?;
            let s = load_split(&input, &cfg)?;
            let trained = train(target_user, &s.train, &cfg.train)?;
            trained.log.assert_disjoint(&s.val)?;
            create_dir(&out)?;
            save_checkpoint(&out.join("checkpoint.bin"), &trained.store, &trained.moments)?;
            write_atomic(&out.join("config.txt"), cfg.to_text().as_bytes())?;
            write_atomic(&out.join("target.txt"), format!("{target_user}\n").as_bytes())?;
            write_logs(&out, &trained.log)?;
            write_manifest(
                &out,
                "train",
                &cfg,
                &[("seed", cfg.train.seed.to_string()), ("target_user", target_user.to_string())],
            )?;
            let last = trained.log.losses.last().map_or(f64::NAN, |r| r.total);
            println!("trained user {target_user} ({}); final loss {last:.6}", cfg.train.model.variant.name());
        }
        Command::Evaluate { common, input, run, out } => {
            require_dir(&run, "run directory", "run `ppgfusion train --out RUN ...` first")?;
            let cfg = RunConfig::load(&run.join("config.txt"))?;
            let cfg = RunConfig {
                train: TrainConfig {
                    seed: common.seed.unwrap_or(cfg.train.seed),
                    ..cfg.train
                },
                ..cfg
            };
            if common.config.is_some() || !common.overrides.is_empty() {
                return Err(Failure::Usage(
                    "evaluate reads the configuration stored in --run; drop --config and --set".into(),
                ));
            }
            let target: usize = std::fs::read_to_string(run.join("target.txt"))
                .map_err(|e| Error::io(run.join("target.txt"), e))?
                .trim()
                .parse()
                .map_err(|_| Error::format(run.join("target.txt"), "expected a user id"))?;
            let (model, store, moments) = load_checkpoint(&run.join("checkpoint.bin"), cfg.train.model)?;
            let s = load_split(&input, &cfg)?;
            let seed = derive_seed(cfg.train.seed, 40, target as u64);
            let r = evaluate(target, &model, &store, &moments, &s.val, cfg.train.pairs.factor, seed, &cfg.eval)?;
            let out = out.unwrap_or_else(|| run.join("eval"));
            create_dir(&out)?;
            let pairs = validation_pairs(target, &s.val, cfg.train.pairs.factor, seed)?;
            let curve = roc(&score_pairs(&model, &store, &s.val, &pairs)?.set)?;
            write_atomic(&out.join("roc.csv"), roc_csv(&curve).as_bytes())?;
            write_atomic(&out.join("metrics.csv"), results_csv(std::slice::from_ref(&r)).as_bytes())?;
            write_manifest(&out, "evaluate", &cfg, &[("target_user", target.to_string())])?;
            println!(
                "user {target} ({}): EER {:.2}%  ACC {:.2}%",
                r.variant.name(),
                100.0 * r.eer,
                100.0 * r.accuracy
            );
            if let Some(a) = r.alignment {
                println!(
                    "moment cosine {:.4}; mean impostor cosine {:.4}",
                    a.moment_cosine, a.impostor_cosine
                );
            }
        }
        Command::Ablate {
            common,
            input,
            out,
            target_user,
        } => {
            let cfg = load_config(&common)?;
            let s = load_split(&input, &cfg)?;
            let targets: Vec<usize> = match target_user {
                Some(t) => vec![t],
                None => s.train.iter().map(|u| u.subject).collect(),
            };
            let rows = ablation_run(&s, &targets, &cfg.train, &cfg.eval, &Variant::ALL)?;
            create_dir(&out)?;
            write_atomic(&out.join("report.csv"), report_csv(&rows).as_bytes())?;
            let summary = report_summary(&rows);
            write_atomic(&out.join("summary.txt"), summary.as_bytes())?;
            write_manifest(&out, "ablate", &cfg, &[("seed", cfg.train.seed.to_string())])?;
            print!("{summary}");
        }
        Command::Gradcheck { common, step, stencil } => {
            let cfg = load_config(&common)?;
            let stencil = if stencil == "two" { Stencil::TwoPoint } else { Stencil::FourPoint };
            let r = gradcheck_tiny(cfg.train.seed, step, stencil)?;
            println!(
                "max relative error {:.3e} at {}[{}] over {} coordinates",
                r.max_rel_error, r.worst.0, r.worst.1, r.checked
            );
            if !(r.max_rel_error < GRADCHECK_TOLERANCE) {
                return Err(Failure::Lib(Error::Numeric(format!(
                    "gradient error {:.3e} exceeds {GRADCHECK_TOLERANCE:e}",
                    r.max_rel_error
                ))));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
