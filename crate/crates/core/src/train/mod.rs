//! Mini-batch training with per-epoch shuffling, loss logging and
//! resumable checkpoints.

pub mod checkpoint;
pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::data::{Dataset, TaskKind};
use crate::error::{Error, Result};
use crate::layers::loss::mse_loss_batch;
use crate::linalg::{FlushDenormals, Real, Rng};
use crate::model::{build_model, Constraint, Model, ModelConfig};
use crate::optim::Optimizer;

pub use checkpoint::{checkpoint_precision, load_checkpoint, save_checkpoint};
pub use config::{Precision, TrainConfig};

/// RNG substreams of the run seed.
pub const INIT_STREAM: u64 = 0;
pub const SHUFFLE_STREAM: u64 = 1;

pub const CHECKPOINT_FILE: &str = "checkpoint.rlck";
pub const LOSS_LOG_FILE: &str = "loss.csv";
pub const LOSS_LOG_HEADER: &str = "step,loss,alpha,eta";

/// Everything that evolves during training.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub model: Model<T>,
    pub optimizer: Optimizer<T>,
    pub task: TaskKind,
    pub shuffle_rng: Rng,
    pub epoch: u64,
    /// Sample order of the current epoch.
    pub order: Vec<u32>,
    pub cursor: usize,
    /// Sum and count of losses since the last log line.
    pub loss_window: (f64, u64),
}

impl<T: Real> TrainState<T> {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mcfg = ModelConfig::standard(config.model, config.task.z_dim());
        let model = build_model(&mcfg, &mut Rng::substream(config.seed, INIT_STREAM))?;
        let optimizer = Optimizer::new(model.params(), config.optimizer_settings());
        Ok(TrainState {
            model,
            optimizer,
            task: config.task,
            shuffle_rng: Rng::substream(config.seed, SHUFFLE_STREAM),
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
            loss_window: (0.0, 0),
        })
    }

    pub fn step(&self) -> u64 {
        self.optimizer.step
    }

    /// Next batch of sample indices. A fresh permutation is drawn whenever
    /// fewer than `batch` samples remain in the current one; the leftover
    /// tail is skipped.
    pub fn next_batch(&mut self, n: usize, batch: usize) -> Result<Vec<usize>> {
        if batch > n {
            return Err(Error::InvalidArgument(format!("batch of {batch} from {n} samples")));
        }
        if self.order.len() != n || self.cursor + batch > self.order.len() {
            self.order = (0..n as u32).collect();
            self.shuffle_rng.shuffle(&mut self.order);
            self.cursor = 0;
            self.epoch += 1;
        }
        let out = self.order[self.cursor..self.cursor + batch]
            .iter()
            .map(|&i| i as usize)
            .collect();
        self.cursor += batch;
        Ok(out)
    }

    /// One forward/backward/update on the next batch. Returns the batch
    /// loss; a non-finite loss aborts before any parameter changes.
    pub fn train_step(&mut self, data: &Dataset, batch: usize) -> Result<f64> {
        let idx = self.next_batch(data.len(), batch)?;
        let (x, y, z) = data.batch::<T>(&idx);
        let trace = self.model.forward(&x, &y)?;
        let (loss, grad) = mse_loss_batch(trace.output(), &z)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step() + 1,
                loss,
            });
        }
        let grads = self.model.backward(&trace, &grad)?;
        self.optimizer.update(self.model.params_mut(), &grads)?;
        Ok(loss)
    }

    /// Smallest value held by any non-negative parameter.
    pub fn min_constrained(&self) -> Option<f64> {
        self.model
            .params()
            .entries()
            .iter()
            .filter(|e| e.constraint == Constraint::NonNegative)
            .map(|e| e.tensor.min_value().as_f64())
            .reduce(f64::min)
    }
}

/// One row of the loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub loss: f64,
    pub alpha: f64,
    pub eta: f64,
}

impl LossRecord {
    pub fn csv(&self) -> String {
        format!("{},{},{},{}", self.step, self.loss, self.alpha, self.eta)
    }
}

/// Parses a loss log written by [`train`].
pub fn read_loss_log(path: impl AsRef<Path>) -> Result<Vec<LossRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::format("loss log", path, format!("bad row '{l}'"));
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(LossRecord {
                step: f[0].parse().map_err(|_| bad())?,
                loss: f[1].parse().map_err(|_| bad())?,
                alpha: f[2].parse().map_err(|_| bad())?,
                eta: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Keeps the log rows up to `step`, so a resumed run appends where the
/// checkpoint left off.
fn prepare_log(path: &Path, step: u64) -> Result<fs::File> {
    let kept: Vec<String> = if step > 0 && path.exists() {
        read_loss_log(path)?
            .into_iter()
            .filter(|r| r.step <= step)
            .map(|r| r.csv())
            .collect()
    } else {
        Vec::new()
    };
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = format!("{LOSS_LOG_HEADER}\n");
    for row in kept {
        text.push_str(&row);
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(f)
}

/// Where a run's artifacts live.
pub fn run_paths(out_dir: &Path) -> (PathBuf, PathBuf) {
    (out_dir.join(CHECKPOINT_FILE), out_dir.join(LOSS_LOG_FILE))
}

/// Trains until `config.total_updates`, starting from `state`. Writes the
/// loss log and checkpoints into `config.out_dir`, including a final
/// checkpoint. On a non-finite loss the last checkpoint on disk is left
/// untouched and the error is returned.
pub fn train<T: Real>(config: &TrainConfig, data: &Dataset, mut state: TrainState<T>) -> Result<TrainState<T>> {
    if data.task != state.task {
        return Err(Error::InvalidArgument(format!(
            "training set holds {} samples, run is configured for {}",
            data.task, state.task
        )));
    }
    let out = &config.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (ckpt_path, log_path) = run_paths(out);
    let mut log = prepare_log(&log_path, state.step())?;
    let _ftz = FlushDenormals::enable();
    while state.step() < config.total_updates {
        let loss = state.train_step(data, config.batch_size)?;
        state.loss_window.0 += loss;
        state.loss_window.1 += 1;
        let step = state.step();
        if step.is_multiple_of(config.log_every) {
            let rec = LossRecord {
                step,
                loss: state.loss_window.0 / state.loss_window.1 as f64,
                alpha: state.optimizer.alpha,
                eta: state.optimizer.eta,
            };
            writeln!(log, "{}", rec.csv()).map_err(|e| Error::io(&log_path, e))?;
            log::debug!("step {step} loss {:.6}", rec.loss);
            state.loss_window = (0.0, 0);
        }
        if config.checkpoint_every > 0 && step.is_multiple_of(config.checkpoint_every) {
            save_checkpoint(&state, &ckpt_path)?;
        }
    }
    save_checkpoint(&state, &ckpt_path)?;
    Ok(state)
}

/// Loads the training set named by the config, truncated to `train_limit`.
pub fn load_training_set(config: &TrainConfig) -> Result<Dataset> {
    let path = config
        .train_data
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("no training data configured".into()))?;
    let mut ds = Dataset::read(path)?;
    if let Some(n) = config.train_limit {
        ds.truncate(n);
    }
    Ok(ds)
}
