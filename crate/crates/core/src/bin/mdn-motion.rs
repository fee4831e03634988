use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mdn_motion::checkpoint::Checkpoint;
use mdn_motion::config::{LossTerm, LossWeights};
use mdn_motion::data::{generate, load_dataset, load_predictions, save_dataset, save_predictions, PredictionRecord};
use mdn_motion::grad::{check_fixture, finite_diff_check};
use mdn_motion::metrics::evaluate_predictions;
use mdn_motion::model::predict;
use mdn_motion::run_config::RunConfigFile;
use mdn_motion::trainer::{self, write_log, TrainError, TrainLogRow, LOG_HEADER};
use mdn_motion::Error;

const THREADS_ENV: &str = "MDN_MOTION_THREADS";

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_CHECK: u8 = 4;

#[derive(Parser)]
#[command(name = "mdn-motion", version, about = "Multi-hypothesis 3D motion prediction from a single 2D pose")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multimodal dataset.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_samples: Option<usize>,
    },
    /// Train a model, or continue training from a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Write M hypotheses and mixture weights for every sample.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Directory for eval_report.csv and eval_report.json (defaults to
        /// the directory of --pred).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Compare analytic gradients with finite differences on a small model.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
    },
}

#[derive(Args, Default)]
struct TrainOverrides {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    components: Option<usize>,
    #[arg(long)]
    hidden_width: Option<usize>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    w_d: Option<f64>,
}

impl TrainOverrides {
    fn apply(self, rc: &mut RunConfigFile) {
        macro_rules! set {
            ($($f:ident),*) => { $( if self.$f.is_some() { rc.$f = self.$f; } )* };
        }
        set!(dataset, out_dir, seed, epochs, batch_size, components, hidden_width, lr0, w_d);
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Numeric { .. } => EXIT_NUMERIC,
            _ => EXIT_INPUT,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(message) = configure_threads() {
        eprintln!("error: {message}");
        return ExitCode::from(EXIT_INPUT);
    }
    let result = match cli.command {
        Command::GenData {
            spec,
            out,
            seed,
            n_samples,
        } => gen_data(&spec, &out, seed, n_samples),
        Command::Train {
            config,
            resume,
            overrides,
        } => train(&config, resume.as_deref(), overrides),
        Command::Predict { ckpt, input, out } => run_predict(&ckpt, &input, &out),
        Command::Eval { pred, gt, out_dir } => eval(&pred, &gt, out_dir.as_deref()),
        Command::Gradcheck {
            config,
            batch,
            step,
            tol,
        } => gradcheck(config.as_deref(), batch, step, tol),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

/// Relative paths in a config file are taken relative to that file.
fn relative_to(config: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    config.parent().map_or_else(|| p.to_path_buf(), |dir| dir.join(p))
}

fn gen_data(spec_path: &Path, out: &Path, seed: Option<u64>, n_samples: Option<usize>) -> CmdResult {
    let mut rc = RunConfigFile::load(spec_path)?;
    rc.seed = seed.or(rc.seed);
    rc.n_samples = n_samples.or(rc.n_samples);
    let spec = rc.synthetic_spec()?;
    let ds = generate(&spec)?;
    save_dataset(&ds, out)?;
    println!(
        "wrote {} samples (C={}, T={}, modes={}) to {}",
        ds.len(),
        ds.joints,
        ds.frames,
        spec.n_modes,
        out.display()
    );
    Ok(())
}

fn train(config: &Path, resume: Option<&Path>, overrides: TrainOverrides) -> CmdResult {
    let mut rc = RunConfigFile::load(config)?;
    let file_sets_epochs = rc.epochs.is_some() || overrides.epochs.is_some();
    overrides.apply(&mut rc);
    let cfg = rc.train_config()?;
    let dataset = rc
        .dataset
        .as_deref()
        .map(|p| relative_to(config, p))
        .ok_or_else(|| Failure {
            code: EXIT_INPUT,
            message: "no dataset given (set `dataset` in the config or pass --dataset)".into(),
        })?;
    let out_dir = relative_to(config, rc.out_dir.as_deref().unwrap_or(Path::new(".")));
    let ckpt_path = rc
        .checkpoint
        .as_deref()
        .map_or_else(|| out_dir.join("checkpoint.bin"), |p| relative_to(config, p));
    let log_path = out_dir.join("train_log.csv");
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let ds = load_dataset(&dataset)?;
    let (start, appending) = match resume {
        Some(path) => {
            // architecture and optimizer settings come from the checkpoint;
            // only the epoch budget may be extended
            let mut ck = Checkpoint::load(path)?;
            if file_sets_epochs {
                ck.model.cfg.epochs = cfg.epochs;
            }
            (ck, log_path.exists())
        }
        None => (trainer::initial_checkpoint(&ds, &cfg)?, false),
    };
    let resolved = rc.resolved(&start.model.cfg, ds.generator.as_ref());
    write_text(&out_dir.join("resolved_config.toml"), &resolved.to_toml())?;

    match trainer::resume(&ds, start) {
        Ok(out) => {
            out.checkpoint.save(&ckpt_path)?;
            save_log(&out.log, &log_path, appending)?;
            if let Some(last) = out.log.last() {
                println!("epoch {} total={:.6} lr={:e}", last.epoch, last.loss.total, last.lr);
            }
            println!("checkpoint: {}", ckpt_path.display());
            Ok(())
        }
        Err(TrainError::Numeric {
            epoch,
            segment,
            last_good,
            log,
        }) => {
            let path = out_dir.join("last_good.bin");
            last_good.save(&path)?;
            save_log(&log, &log_path, appending)?;
            Err(Failure {
                code: EXIT_NUMERIC,
                message: format!(
                    "non-finite value in {segment} during epoch {epoch}; last good checkpoint: {}",
                    path.display()
                ),
            })
        }
        Err(TrainError::Other(e)) => Err(e.into()),
    }
}

fn save_log(rows: &[TrainLogRow], path: &Path, append: bool) -> CmdResult {
    if !append {
        return Ok(write_log(rows, path)?);
    }
    let mut text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if !text.starts_with(LOG_HEADER) {
        return Err(Failure {
            code: EXIT_INPUT,
            message: format!("{} is not a training log", path.display()),
        });
    }
    for r in rows {
        text.push_str(&r.csv_line());
        text.push('\n');
    }
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    std::fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn run_predict(ckpt: &Path, input: &Path, out: &Path) -> CmdResult {
    let model = Checkpoint::load(ckpt)?.model;
    let ds = load_dataset(input)?;
    if ds.joints != model.cfg.joints {
        return Err(Error::dim("input joints", model.cfg.joints, ds.joints).into());
    }
    if ds.frames != model.cfg.frames {
        return Err(Error::dim("input frames", model.cfg.frames, ds.frames).into());
    }
    let preds = ds
        .samples
        .iter()
        .map(|s| {
            let (hypotheses, alphas) = predict(&s.input, &model)?;
            Ok(PredictionRecord {
                id: s.id,
                hypotheses,
                alphas,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    save_predictions(&preds, ds.joints, ds.frames, out)?;
    println!("wrote {} predictions (M={}) to {}", preds.len(), model.cfg.components, out.display());
    Ok(())
}

fn eval(pred: &Path, gt: &Path, out_dir: Option<&Path>) -> CmdResult {
    let (joints, frames, preds) = load_predictions(pred)?;
    let ds = load_dataset(gt)?;
    if joints != ds.joints || frames != ds.frames {
        return Err(Failure {
            code: EXIT_INPUT,
            message: format!(
                "predictions are C={joints} T={frames}, ground truth is C={} T={}",
                ds.joints, ds.frames
            ),
        });
    }
    let report = evaluate_predictions(&preds, &ds)?;
    let dir = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| pred.parent().unwrap_or(Path::new(".")).to_path_buf());
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    report.write(dir.join("eval_report.csv"), dir.join("eval_report.json"))?;
    println!("{}", report.summary_line());
    Ok(())
}

fn gradcheck(config: Option<&Path>, batch: usize, step: f64, tol: f64) -> CmdResult {
    let mut rc = match config {
        Some(p) => RunConfigFile::load(p)?,
        None => RunConfigFile::default(),
    };
    rc.joints = rc.joints.or(Some(2));
    rc.frames = rc.frames.or(Some(3));
    rc.components = rc.components.or(Some(3));
    rc.hidden_width = rc.hidden_width.or(Some(16));
    let cfg = rc.train_config()?;
    if batch < 1 {
        return Err(Failure {
            code: EXIT_INPUT,
            message: "batch must be at least 1".into(),
        });
    }
    let (model, samples) = check_fixture(&cfg, batch, cfg.seed)?;

    let mut failed = Vec::new();
    let checks = LossTerm::ALL
        .iter()
        .map(|t| (t.name(), LossWeights::only(*t)))
        .chain(std::iter::once(("total", cfg.weights)));
    for (name, weights) in checks {
        let report = finite_diff_check(&model, &samples, &weights, step, tol)?;
        println!(
            "{:<6} max_rel_err={:.3e} worst={} {}",
            name,
            report.max_rel_error,
            report.worst_segment,
            if report.passed { "ok" } else { "FAIL" }
        );
        if report.step_underflow {
            eprintln!("warning: step {step:e} is below the reliable range; differences are rounding-dominated");
        }
        if !report.passed {
            failed.push(format!("{name} (worst segment {})", report.worst_segment));
        }
    }
    if failed.is_empty() {
        println!("gradcheck passed (tol {tol:e})");
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_CHECK,
            message: format!("gradcheck failed: {}", failed.join(", ")),
        })
    }
}
