//! Training configuration and its `key = value` text form.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::data::TaskKind;
use crate::error::{Error, Result};
use crate::model::ModelKind;
use crate::optim::{AdamHyper, LrSchedule, OptimizerSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::Single => "single",
            Precision::Double => "double",
        }
    }

    pub fn bytes(self) -> u8 {
        match self {
            Precision::Single => 4,
            Precision::Double => 8,
        }
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "single" | "f32" => Ok(Precision::Single),
            "double" | "f64" => Ok(Precision::Double),
            _ => Err(Error::InvalidArgument(format!(
                "unknown precision '{s}', expected single or double"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub task: TaskKind,
    pub model: ModelKind,
    pub batch_size: usize,
    pub total_updates: u64,
    pub alpha0: f64,
    pub eta0: f64,
    pub decay_factor: f64,
    pub decay_every: u64,
    pub eps_mul: f64,
    pub seed: u64,
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    /// Use only the first `n` training samples.
    pub train_limit: Option<usize>,
    pub out_dir: PathBuf,
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub precision: Precision,
    /// Projected gradient descent instead of the multiplicative update.
    pub projected: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: TaskKind::Translation,
            model: ModelKind::Can,
            batch_size: 100,
            total_updates: 200_000,
            alpha0: 0.005,
            eta0: 0.005,
            decay_factor: 0.95,
            decay_every: 500,
            eps_mul: 1e-20,
            seed: 1,
            train_data: None,
            test_data: None,
            train_limit: None,
            out_dir: PathBuf::from("run"),
            checkpoint_every: 10_000,
            log_every: 100,
            precision: Precision::Single,
            projected: false,
        }
    }
}

const KEYS: [&str; 18] = [
    "task",
    "model",
    "batch_size",
    "total_updates",
    "alpha0",
    "eta0",
    "decay_factor",
    "decay_every",
    "eps_mul",
    "seed",
    "train_data",
    "test_data",
    "train_limit",
    "out_dir",
    "checkpoint_every",
    "log_every",
    "precision",
    "projected",
];

fn parse_num<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad value '{value}' for {key}")))
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl TrainConfig {
    pub fn optimizer_settings(&self) -> OptimizerSettings {
        OptimizerSettings {
            alpha0: self.alpha0,
            eta0: self.eta0,
            eps_mul: self.eps_mul,
            schedule: LrSchedule {
                decay_factor: self.decay_factor,
                decay_every: self.decay_every,
            },
            adam: AdamHyper::default(),
            projected: self.projected,
        }
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "task" => self.task = v.parse()?,
            "model" => self.model = v.parse()?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "total_updates" => self.total_updates = parse_num(key, v)?,
            "alpha0" => self.alpha0 = parse_num(key, v)?,
            "eta0" => self.eta0 = parse_num(key, v)?,
            "decay_factor" => self.decay_factor = parse_num(key, v)?,
            "decay_every" => self.decay_every = parse_num(key, v)?,
            "eps_mul" => self.eps_mul = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "train_data" => self.train_data = opt_path(v),
            "test_data" => self.test_data = opt_path(v),
            "train_limit" => self.train_limit = if v.is_empty() { None } else { Some(parse_num(key, v)?) },
            "out_dir" => self.out_dir = PathBuf::from(v),
            "checkpoint_every" => self.checkpoint_every = parse_num(key, v)?,
            "log_every" => self.log_every = parse_num(key, v)?,
            "precision" => self.precision = v.parse()?,
            "projected" => self.projected = parse_num(key, v)?,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown config key '{other}' (known: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("line {}: expected 'key = value', got '{raw}'", i + 1))
            })?;
            cfg.set(k, v)
                .map_err(|e| Error::InvalidArgument(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.alpha0 > 0.0) || !(self.eta0 > 0.0) || !(self.eps_mul > 0.0) {
            return bad("alpha0, eta0 and eps_mul must be positive");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad("decay_factor must lie in (0, 1]");
        }
        if self.log_every == 0 {
            return bad("log_every must be positive");
        }
        Ok(())
    }

    /// Every field, one `key = value` line each, in a fixed order.
    pub fn serialize(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut s = String::new();
        for key in KEYS {
            let value = match key {
                "task" => self.task.name().to_string(),
                "model" => self.model.name().to_ascii_lowercase(),
                "batch_size" => self.batch_size.to_string(),
                "total_updates" => self.total_updates.to_string(),
                "alpha0" => self.alpha0.to_string(),
                "eta0" => self.eta0.to_string(),
                "decay_factor" => self.decay_factor.to_string(),
                "decay_every" => self.decay_every.to_string(),
                "eps_mul" => format!("{:e}", self.eps_mul),
                "seed" => self.seed.to_string(),
                "train_data" => path(&self.train_data),
                "test_data" => path(&self.test_data),
                "train_limit" => self.train_limit.map(|n| n.to_string()).unwrap_or_default(),
                "out_dir" => self.out_dir.display().to_string(),
                "checkpoint_every" => self.checkpoint_every.to_string(),
                "log_every" => self.log_every.to_string(),
                "precision" => self.precision.name().to_string(),
                "projected" => self.projected.to_string(),
                _ => unreachable!(),
            };
            let _ = writeln!(s, "{key} = {value}");
        }
        s
    }
}
