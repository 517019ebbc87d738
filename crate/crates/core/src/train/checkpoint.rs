//! RLCK checkpoints: everything needed to continue a run bit-exactly.
//!
//! Little-endian layout: `b"RLCK"`, u32 version, u8 dtype width, u8 model
//! kind, u8 task, u8 reserved; the model configuration; the optimizer
//! settings, rates and step; each parameter (name, constraint, shape, raw
//! data, Adam moments); the shuffle RNG state; the epoch order, cursor and
//! the partial loss window.

use std::fs;
use std::path::Path;

use crate::data::TaskKind;
use crate::error::{Error, Result};
use crate::linalg::{Real, Rng, RngState, Tensor2D};
use crate::model::{Constraint, Model, ModelConfig, ModelKind, ParamRegistry};
use crate::optim::{AdamHyper, AdamState, LrSchedule, Optimizer, OptimizerSettings};

use super::TrainState;

pub const RLCK_MAGIC: &[u8; 4] = b"RLCK";
pub const RLCK_VERSION: u32 = 1;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn tensor<T: Real>(&mut self, t: &Tensor2D<T>) {
        for &v in t.as_slice() {
            v.write_le(&mut self.0);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, detail: impl Into<String>) -> Error {
        Error::format("checkpoint", self.path, detail)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn tensor<T: Real>(&mut self, rows: usize, cols: usize) -> Result<Tensor2D<T>> {
        let raw = self.take(rows * cols * T::BYTES)?;
        Tensor2D::new(rows, cols, raw.chunks_exact(T::BYTES).map(T::read_le).collect())
    }
}

pub fn encode_checkpoint<T: Real>(state: &TrainState<T>) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(RLCK_MAGIC);
    w.u32(RLCK_VERSION);
    let cfg = state.model.config();
    w.u8(T::BYTES as u8);
    w.u8(cfg.kind.id());
    w.u8(state.task.id());
    w.u8(0);
    for d in [
        cfg.input_dim,
        cfg.relation_units,
        cfg.pooled_units,
        cfg.z_dim,
        cfg.hidden.len(),
    ] {
        w.u32(d as u32);
    }
    for &h in &cfg.hidden {
        w.u32(h as u32);
    }

    let opt = &state.optimizer;
    let s = &opt.settings;
    for v in [s.alpha0, s.eta0, s.eps_mul, s.schedule.decay_factor] {
        w.f64(v);
    }
    w.u64(s.schedule.decay_every);
    for v in [s.adam.beta1, s.adam.beta2, s.adam.eps] {
        w.f64(v);
    }
    w.u8(s.projected as u8);
    w.f64(opt.alpha);
    w.f64(opt.eta);
    w.u64(opt.step);

    let entries = state.model.params().entries();
    w.u32(entries.len() as u32);
    for (e, adam) in entries.iter().zip(&opt.adam) {
        w.u32(e.name.len() as u32);
        w.0.extend_from_slice(e.name.as_bytes());
        w.u8(match e.constraint {
            Constraint::Unconstrained => 0,
            Constraint::NonNegative => 1,
        });
        w.u32(e.tensor.rows() as u32);
        w.u32(e.tensor.cols() as u32);
        w.tensor(&e.tensor);
        match adam {
            Some(a) => {
                w.u8(1);
                w.u64(a.t);
                w.tensor(&a.m);
                w.tensor(&a.v);
            }
            None => w.u8(0),
        }
    }

    let rng = state.shuffle_rng.state();
    w.0.extend_from_slice(&rng.seed);
    w.u64(rng.stream);
    w.0.extend_from_slice(&rng.word_pos.to_le_bytes());
    w.u64(state.epoch);
    w.u64(state.cursor as u64);
    w.u64(state.order.len() as u64);
    for &i in &state.order {
        w.u32(i);
    }
    w.f64(state.loss_window.0);
    w.u64(state.loss_window.1);
    w.0
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8], path: &Path) -> Result<TrainState<T>> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != RLCK_MAGIC {
        return Err(r.err("missing RLCK magic"));
    }
    let version = r.u32()?;
    if version != RLCK_VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let width = r.u8()? as usize;
    if width != T::BYTES {
        return Err(r.err(format!(
            "stored with {}-byte reals, loading as {}-byte",
            width,
            T::BYTES
        )));
    }
    let kind = ModelKind::from_id(r.u8()?).ok_or_else(|| r.err("unknown model kind"))?;
    let task = TaskKind::from_id(r.u8()?).ok_or_else(|| r.err("unknown task"))?;
    r.u8()?;
    let input_dim = r.u32()? as usize;
    let relation_units = r.u32()? as usize;
    let pooled_units = r.u32()? as usize;
    let z_dim = r.u32()? as usize;
    let n_hidden = r.u32()? as usize;
    let hidden = (0..n_hidden)
        .map(|_| r.u32().map(|v| v as usize))
        .collect::<Result<_>>()?;
    let config = ModelConfig {
        kind,
        input_dim,
        relation_units,
        pooled_units,
        hidden,
        z_dim,
    };

    let alpha0 = r.f64()?;
    let eta0 = r.f64()?;
    let eps_mul = r.f64()?;
    let decay_factor = r.f64()?;
    let decay_every = r.u64()?;
    let adam = AdamHyper {
        beta1: r.f64()?,
        beta2: r.f64()?,
        eps: r.f64()?,
    };
    let projected = r.u8()? != 0;
    let settings = OptimizerSettings {
        alpha0,
        eta0,
        eps_mul,
        schedule: LrSchedule {
            decay_factor,
            decay_every,
        },
        adam,
        projected,
    };
    let alpha = r.f64()?;
    let eta = r.f64()?;
    let step = r.u64()?;

    let n_params = r.u32()? as usize;
    let mut registry = ParamRegistry::new();
    let mut adam_states = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| r.err("parameter name is not UTF-8"))?;
        let constraint = match r.u8()? {
            0 => Constraint::Unconstrained,
            1 => Constraint::NonNegative,
            c => return Err(r.err(format!("unknown constraint tag {c}"))),
        };
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let tensor = r.tensor::<T>(rows, cols)?;
        adam_states.push(match r.u8()? {
            0 => None,
            _ => {
                let t = r.u64()?;
                let m = r.tensor(rows, cols)?;
                let v = r.tensor(rows, cols)?;
                Some(AdamState { m, v, t })
            }
        });
        registry.push(name, tensor, constraint);
    }
    let model = Model::from_params(&config, registry)?;

    let mut seed = [0u8; 32];
    seed.copy_from_slice(r.take(32)?);
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
    let shuffle_rng = Rng::from_state(RngState { seed, stream, word_pos });
    let epoch = r.u64()?;
    let cursor = r.u64()? as usize;
    let order_len = r.u64()? as usize;
    if order_len > (bytes.len() - r.pos) / 4 {
        return Err(r.err("epoch order longer than file"));
    }
    let order = (0..order_len).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let loss_window = (r.f64()?, r.u64()?);
    if r.pos != bytes.len() {
        return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    if cursor > order.len() {
        return Err(r.err("cursor beyond epoch order"));
    }

    let optimizer = Optimizer {
        settings,
        alpha,
        eta,
        step,
        adam: adam_states,
    };
    Ok(TrainState {
        model,
        optimizer,
        task,
        shuffle_rng,
        epoch,
        order,
        cursor,
        loss_window,
    })
}

/// Writes through a temporary file and a rename, so an interrupted save
/// leaves the previous checkpoint intact.
pub fn save_checkpoint<T: Real>(state: &TrainState<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("rlck.tmp");
    fs::write(&tmp, encode_checkpoint(state)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<TrainState<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// Width in bytes of the reals stored in a checkpoint.
pub fn checkpoint_precision(path: impl AsRef<Path>) -> Result<u8> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 9 || &bytes[..4] != RLCK_MAGIC {
        return Err(Error::format("checkpoint", path, "missing RLCK magic"));
    }
    Ok(bytes[8])
}
