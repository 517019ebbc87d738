use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use relnet_core::data::dataset::generate_dataset;
use relnet_core::data::synthetic::write_synthetic_cifar;
use relnet_core::data::{ingest_patch_pairs, Dataset, TaskKind};
use relnet_core::eval::{evaluate_model, evaluate_model_on_pairs, EvalReport};
use relnet_core::gradcheck::{run_all, standard_checks, GradCheckConfig};
use relnet_core::toy::run_toy;
use relnet_core::train::checkpoint::{checkpoint_precision, load_checkpoint};
use relnet_core::train::config::{Precision, TrainConfig};
use relnet_core::train::{load_training_set, run_paths, train, TrainState};
use relnet_core::Real;

#[derive(Parser)]
#[command(name = "relnet", version, about = "Learn geometric relations between image patches")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate warped patch-pair datasets from CIFAR-10 binaries.
    GenData(GenDataArgs),
    /// Write synthetic images in the CIFAR-10 binary layout.
    SynthCifar(SynthCifarArgs),
    /// Train a model.
    Train(Box<TrainArgs>),
    /// Evaluate a checkpoint on a dataset or on real image pairs.
    Eval(EvalArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Run the hand-built relation example.
    ToyDemo(ToyArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    task: TaskKind,
    /// Directory holding data_batch_1.bin ... test_batch.bin.
    #[arg(long)]
    cifar: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Warped samples drawn per source image.
    #[arg(long, default_value_t = 10)]
    repeats: usize,
}

#[derive(Args)]
struct SynthCifarArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50_000)]
    train: usize,
    #[arg(long, default_value_t = 10_000)]
    test: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Config file of `key = value` lines; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    total_updates: Option<String>,
    #[arg(long)]
    alpha0: Option<String>,
    #[arg(long)]
    eta0: Option<String>,
    #[arg(long)]
    decay_factor: Option<String>,
    #[arg(long)]
    decay_every: Option<String>,
    #[arg(long)]
    eps_mul: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    train_data: Option<String>,
    #[arg(long)]
    test_data: Option<String>,
    #[arg(long)]
    train_limit: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
    #[arg(long)]
    checkpoint_every: Option<String>,
    #[arg(long)]
    log_every: Option<String>,
    #[arg(long)]
    precision: Option<String>,
    #[arg(long)]
    projected: Option<String>,
}

impl TrainArgs {
    fn overrides(&self) -> [(&'static str, &Option<String>); 18] {
        [
            ("task", &self.task),
            ("model", &self.model),
            ("batch_size", &self.batch_size),
            ("total_updates", &self.total_updates),
            ("alpha0", &self.alpha0),
            ("eta0", &self.eta0),
            ("decay_factor", &self.decay_factor),
            ("decay_every", &self.decay_every),
            ("eps_mul", &self.eps_mul),
            ("seed", &self.seed),
            ("train_data", &self.train_data),
            ("test_data", &self.test_data),
            ("train_limit", &self.train_limit),
            ("out_dir", &self.out_dir),
            ("checkpoint_every", &self.checkpoint_every),
            ("log_every", &self.log_every),
            ("precision", &self.precision),
            ("projected", &self.projected),
        ]
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// RLDS test file.
    #[arg(long, conflicts_with = "real", required_unless_present = "real")]
    data: Option<PathBuf>,
    /// Two PGM images and the homography file mapping the first onto the second.
    #[arg(long, num_args = 3, value_names = ["IMAGE_A", "IMAGE_B", "H_FILE"])]
    real: Option<Vec<PathBuf>>,
    /// Patch pairs sampled from the real image pair.
    #[arg(long, default_value_t = 25_000)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Print a table instead of CSV.
    #[arg(long)]
    table: bool,
    /// Also append the CSV row to this file, writing the header if it is new.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Sign-flip the analytic gradient of this check.
    #[arg(long, value_name = "LAYER")]
    corrupt: Option<String>,
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Failure kinds mapped to exit codes 1 and 2.
enum Failure {
    Check,
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<relnet_core::Error> for Failure {
    fn from(e: relnet_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type Fallible<V> = std::result::Result<V, Failure>;
type Outcome = Fallible<()>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::SynthCifar(a) => synth_cifar(a),
        Command::Train(a) => train_cmd(*a),
        Command::Eval(a) => eval_cmd(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::ToyDemo(a) => toy_demo(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn gen_data(a: GenDataArgs) -> Outcome {
    if a.repeats == 0 {
        return Err(Failure::Usage("--repeats must be positive".into()));
    }
    let (train, test) = generate_dataset(&a.cifar, a.task, a.repeats, a.seed, &a.out)?;
    println!("{}", train.display());
    println!("{}", test.display());
    Ok(())
}

fn synth_cifar(a: SynthCifarArgs) -> Outcome {
    for p in write_synthetic_cifar(&a.out, a.train, a.test, a.seed)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn effective_config(a: &TrainArgs) -> Fallible<TrainConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            TrainConfig::parse(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    for (key, value) in a.overrides() {
        if let Some(v) = value {
            cfg.set(key, v)
                .map_err(|e| Failure::Usage(format!("--{}: {e}", key.replace('_', "-"))))?;
        }
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn train_cmd(a: TrainArgs) -> Outcome {
    let cfg = effective_config(&a)?;
    if a.print_config {
        print!("{}", cfg.serialize());
        return Ok(());
    }
    if cfg.train_data.is_none() {
        return Err(Failure::Usage(
            "no training data: pass --train-data or set train_data".into(),
        ));
    }
    match cfg.precision {
        Precision::Single => run_training::<f32>(&cfg, a.resume),
        Precision::Double => run_training::<f64>(&cfg, a.resume),
    }
}

fn run_training<T: Real>(cfg: &TrainConfig, resume: bool) -> Outcome {
    let data = load_training_set(cfg)?;
    let (ckpt, log_path) = run_paths(&cfg.out_dir);
    let state = if resume {
        let state: TrainState<T> = load_checkpoint(&ckpt)?;
        if state.model.config().kind != cfg.model || state.task != cfg.task {
            return Err(Failure::Usage(format!(
                "checkpoint holds {} on {}, config asks for {} on {}",
                state.model.config().kind,
                state.task,
                cfg.model,
                cfg.task
            )));
        }
        log::info!("resuming from step {}", state.step());
        state
    } else {
        TrainState::new(cfg)?
    };
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    fs::write(cfg.out_dir.join("config.txt"), cfg.serialize()).context("writing config.txt")?;
    log::info!(
        "training {} on {} ({} samples, {} updates)",
        cfg.model,
        cfg.task,
        data.len(),
        cfg.total_updates
    );
    let state = train(cfg, &data, state)?;
    log::info!("wrote {} and {}", ckpt.display(), log_path.display());
    if let Some(test) = &cfg.test_data {
        let test = Dataset::read(test)?;
        let report = evaluate_model(&state.model, &test, cfg.task)?;
        write_report(&report, &cfg.out_dir.join("eval.csv"))?;
        println!("{report}");
    }
    Ok(())
}

fn write_report(report: &EvalReport, path: &Path) -> anyhow::Result<()> {
    let mut text = if path.exists() {
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?
    } else {
        format!("{}\n", EvalReport::CSV_HEADER)
    };
    text.push_str(&report.csv_row());
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn eval_cmd(a: EvalArgs) -> Outcome {
    let report = match checkpoint_precision(&a.checkpoint)? {
        4 => evaluate_checkpoint::<f32>(&a)?,
        8 => evaluate_checkpoint::<f64>(&a)?,
        w => return Err(Failure::Runtime(anyhow::anyhow!("checkpoint stores {w}-byte reals"))),
    };
    if a.table {
        println!("{report}");
    } else {
        print!("{}", report.to_csv());
    }
    if let Some(out) = &a.out {
        write_report(&report, out)?;
    }
    Ok(())
}

fn evaluate_checkpoint<T: Real>(a: &EvalArgs) -> anyhow::Result<EvalReport> {
    let state: TrainState<T> = load_checkpoint(&a.checkpoint)?;
    if let Some(real) = &a.real {
        let [img_a, img_b, h] = real.as_slice() else {
            bail!("--real takes three paths");
        };
        let pairs = ingest_patch_pairs(img_a, img_b, h, a.count, a.seed)?;
        return Ok(evaluate_model_on_pairs(&state.model, &pairs, state.task)?);
    }
    let path = a.data.as_ref().context("--data is required")?;
    let data = Dataset::read(path)?;
    Ok(evaluate_model(&state.model, &data, state.task)?)
}

fn gradcheck(a: GradcheckArgs) -> Outcome {
    if let Some(name) = &a.corrupt {
        let names: Vec<String> = standard_checks().iter().map(|c| c.name()).collect();
        if !names.contains(name) {
            return Err(Failure::Usage(format!(
                "unknown layer '{name}', expected one of: {}",
                names.join(", ")
            )));
        }
    }
    let cfg = GradCheckConfig {
        trials: a.trials,
        step: a.step,
        tol: a.tol,
        seed: a.seed,
        corrupt: false,
    };
    let results = run_all(&cfg, a.corrupt.as_deref());
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.pass).count();
    println!("{} of {} checks passed", results.len() - failed, results.len());
    if failed > 0 {
        return Err(Failure::Check);
    }
    Ok(())
}

fn toy_demo(a: ToyArgs) -> Outcome {
    let report = run_toy(a.trials, a.seed)?;
    print!("{report}");
    if !report.all_recovered() {
        return Err(Failure::Check);
    }
    Ok(())
}
