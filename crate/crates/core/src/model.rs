//! The three compared networks and the registry that routes their
//! parameters to the right optimizer.
//!
//! | CTN            | BLN               | CAN               |
//! |----------------|-------------------|-------------------|
//! | Concat         | Bilinear*, 1200   | CAU*, 1200        |
//! | Linear 1200    | Sum-pool, 300     | Sum-pool, 300     |
//! | PReLU          | l2 norm           | Softmin           |
//! | Linear 300     | Linear 100        | Linear 100        |
//! | PReLU          | PReLU             | PReLU             |
//! | Linear 100     | Linear 100        | Linear 100        |
//! | PReLU          | PReLU             | PReLU             |
//! | Linear 100     | Linear dim(z)     | Linear dim(z)     |
//! | PReLU          |                   |                   |
//! | Linear dim(z)  |                   |                   |
//!
//! `*` marks rank-one factorization. In all three the feature extractor is
//! the identity, so the relation layer sees the normalized patches directly.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::bilinear::{
    bilinear_rankone_backward_batch, bilinear_rankone_forward_batch, concat_forward_batch, BilinearCache,
};
use crate::layers::cau::{cau_rankone_backward_batch, cau_rankone_forward_batch, RankOneCache};
use crate::layers::competition::{softmin_backward_batch, softmin_forward_batch};
use crate::layers::dense::{
    linear_backward_batch, linear_forward_batch, prelu_backward_batch, prelu_forward_batch, PRELU_INIT_SLOPE,
};
use crate::layers::pooling::{
    l2norm_backward_batch, l2norm_forward_batch, sumpool_backward_batch, sumpool_forward_batch,
};
use crate::linalg::{rng_uniform, Real, Rng, Tensor2D};

/// Lower end of the uniform initialization of non-negative factors.
pub const NONNEG_INIT_LO: f64 = 1e-4;

/// Inputs outside this magnitude trigger an unnormalized-input warning.
const NORMALIZED_BOUND: f64 = 0.5 + 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// Concatenation network.
    Ctn,
    /// Bilinear network.
    Bln,
    /// Contrast association network.
    Can,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Ctn, ModelKind::Bln, ModelKind::Can];

    pub fn id(self) -> u8 {
        match self {
            ModelKind::Ctn => 0,
            ModelKind::Bln => 1,
            ModelKind::Can => 2,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ctn => "CTN",
            ModelKind::Bln => "BLN",
            ModelKind::Can => "CAN",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ctn" => Ok(ModelKind::Ctn),
            "bln" => Ok(ModelKind::Bln),
            "can" => Ok(ModelKind::Can),
            _ => Err(Error::InvalidArgument(format!(
                "unknown model '{s}', expected one of: ctn, bln, can"
            ))),
        }
    }
}

/// Layer widths. For CTN, `relation_units` and `pooled_units` are the widths
/// of its first two Linear layers; for BLN/CAN they are the rank-one unit
/// count and the width after sum-pooling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub relation_units: usize,
    pub pooled_units: usize,
    pub hidden: Vec<usize>,
    pub z_dim: usize,
}

impl ModelConfig {
    /// The published sizes: 11x11 patches, 1200 relation units pooled by 4
    /// to 300, two hidden layers of 100.
    pub fn standard(kind: ModelKind, z_dim: usize) -> Self {
        ModelConfig {
            kind,
            input_dim: 121,
            relation_units: 1200,
            pooled_units: 300,
            hidden: vec![100, 100],
            z_dim,
        }
    }

    pub fn pool_group(&self) -> usize {
        self.relation_units.checked_div(self.pooled_units).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.input_dim == 0 || self.relation_units == 0 || self.pooled_units == 0 || self.z_dim == 0 {
            return bad(format!("all model dimensions must be positive: {self:?}"));
        }
        if self.hidden.contains(&0) {
            return bad(format!("hidden widths must be positive: {:?}", self.hidden));
        }
        if self.kind != ModelKind::Ctn && !self.relation_units.is_multiple_of(self.pooled_units) {
            return bad(format!(
                "{} relation units cannot be sum-pooled into {} groups",
                self.relation_units, self.pooled_units
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    NonNegative,
    Unconstrained,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub tensor: Tensor2D<T>,
    pub constraint: Constraint,
}

/// Every trainable tensor of a model, in a fixed order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamRegistry<T> {
    entries: Vec<ParamEntry<T>>,
}

pub type ParamId = usize;

impl<T: Real> ParamRegistry<T> {
    pub fn new() -> Self {
        ParamRegistry { entries: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor2D<T>, constraint: Constraint) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            tensor,
            constraint,
        });
        self.entries.len() - 1
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor2D<T> {
        &self.entries[id].tensor
    }

    pub fn by_name(&self, name: &str) -> Option<&ParamEntry<T>> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Concat,
    CauRankOne { u: ParamId, v: ParamId },
    BilinearRankOne { u: ParamId, v: ParamId },
    SumPool { group: usize },
    Softmin,
    L2Norm,
    Linear { w: ParamId, bias: ParamId },
    PRelu { slope: ParamId },
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Concat => "concat",
            Layer::CauRankOne { .. } => "cau_rankone",
            Layer::BilinearRankOne { .. } => "bilinear_rankone",
            Layer::SumPool { .. } => "sumpool",
            Layer::Softmin => "softmin",
            Layer::L2Norm => "l2norm",
            Layer::Linear { .. } => "linear",
            Layer::PRelu { .. } => "prelu",
        }
    }
}

#[derive(Debug, Clone)]
enum LayerCache<T> {
    None,
    Cau(RankOneCache<T>),
    Bilinear(BilinearCache<T>),
    Norms(Vec<T>),
}

/// Activations kept by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    x: Tensor2D<T>,
    y: Tensor2D<T>,
    /// Output of every layer; the last one is the prediction.
    outputs: Vec<Tensor2D<T>>,
    caches: Vec<LayerCache<T>>,
    generation: u64,
}

impl<T: Real> ForwardTrace<T> {
    pub fn depth(&self) -> usize {
        self.outputs.len()
    }

    pub fn output(&self) -> &Tensor2D<T> {
        self.outputs.last().expect("trace of an empty model")
    }

    /// Output of layer `i`.
    pub fn layer_output(&self, i: usize) -> &Tensor2D<T> {
        &self.outputs[i]
    }
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    layers: Vec<Layer>,
    params: ParamRegistry<T>,
    generation: u64,
}

fn uniform_param<T: Real>(rng: &mut Rng, lo: f64, hi: f64, rows: usize, cols: usize) -> Tensor2D<T> {
    rng_uniform(rng, lo, hi, rows, cols).expect("init range is non-empty")
}

/// Builds the layer stack for `config` and draws initial parameters.
pub fn build_model<T: Real>(config: &ModelConfig, rng: &mut Rng) -> Result<Model<T>> {
    config.validate()?;
    let mut params = ParamRegistry::new();
    let mut layers = Vec::new();
    let n = config.input_dim;

    let linear =
        |params: &mut ParamRegistry<T>, layers: &mut Vec<Layer>, rng: &mut Rng, fan_in: usize, fan_out: usize| {
            let idx = layers.len();
            let s = 1.0 / (fan_in as f64).sqrt();
            let w = params.push(
                format!("{idx}.linear.weight"),
                uniform_param(rng, -s, s, fan_out, fan_in),
                Constraint::Unconstrained,
            );
            let bias = params.push(
                format!("{idx}.linear.bias"),
                Tensor2D::zeros(1, fan_out),
                Constraint::Unconstrained,
            );
            layers.push(Layer::Linear { w, bias });
            let idx = layers.len();
            let slope = params.push(
                format!("{idx}.prelu.slope"),
                Tensor2D::filled(1, 1, T::from_f64(PRELU_INIT_SLOPE)),
                Constraint::Unconstrained,
            );
            layers.push(Layer::PRelu { slope });
            fan_out
        };

    let mut width = match config.kind {
        ModelKind::Ctn => {
            layers.push(Layer::Concat);
            let w = linear(&mut params, &mut layers, rng, 2 * n, config.relation_units);
            linear(&mut params, &mut layers, rng, w, config.pooled_units)
        }
        ModelKind::Bln | ModelKind::Can => {
            let k = config.relation_units;
            let layer = if config.kind == ModelKind::Can {
                let hi = 2.0 / (n as f64).sqrt();
                let u = params.push(
                    "0.cau.u",
                    uniform_param(rng, NONNEG_INIT_LO, hi, k, n),
                    Constraint::NonNegative,
                );
                let v = params.push(
                    "0.cau.v",
                    uniform_param(rng, NONNEG_INIT_LO, hi, k, n),
                    Constraint::NonNegative,
                );
                Layer::CauRankOne { u, v }
            } else {
                let s = 1.0 / (n as f64).sqrt();
                let u = params.push(
                    "0.bilinear.u",
                    uniform_param(rng, -s, s, k, n),
                    Constraint::Unconstrained,
                );
                let v = params.push(
                    "0.bilinear.v",
                    uniform_param(rng, -s, s, k, n),
                    Constraint::Unconstrained,
                );
                Layer::BilinearRankOne { u, v }
            };
            layers.push(layer);
            layers.push(Layer::SumPool {
                group: config.pool_group(),
            });
            layers.push(if config.kind == ModelKind::Can {
                Layer::Softmin
            } else {
                Layer::L2Norm
            });
            config.pooled_units
        }
    };
    for &h in &config.hidden {
        width = linear(&mut params, &mut layers, rng, width, h);
    }
    // final readout has no activation
    let idx = layers.len();
    let s = 1.0 / (width as f64).sqrt();
    let w = params.push(
        format!("{idx}.linear.weight"),
        uniform_param(rng, -s, s, config.z_dim, width),
        Constraint::Unconstrained,
    );
    let bias = params.push(
        format!("{idx}.linear.bias"),
        Tensor2D::zeros(1, config.z_dim),
        Constraint::Unconstrained,
    );
    layers.push(Layer::Linear { w, bias });

    Ok(Model {
        config: config.clone(),
        layers,
        params,
        generation: 0,
    })
}

impl<T: Real> Model<T> {
    /// Reassembles a model from a saved registry; names and shapes must match
    /// a freshly built model of the same configuration.
    pub fn from_params(config: &ModelConfig, params: ParamRegistry<T>) -> Result<Self> {
        let mut template: Model<T> = build_model(config, &mut Rng::new(0))?;
        if template.params.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter tensors, got {}",
                template.params.len(),
                params.len()
            )));
        }
        for (t, p) in template.params.entries.iter().zip(params.entries()) {
            if t.name != p.name || t.tensor.shape() != p.tensor.shape() || t.constraint != p.constraint {
                return Err(Error::InvalidArgument(format!(
                    "parameter '{}' {:?} does not match expected '{}' {:?}",
                    p.name,
                    p.tensor.shape(),
                    t.name,
                    t.tensor.shape()
                )));
            }
        }
        template.params = params;
        Ok(template)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &ParamRegistry<T> {
        &self.params
    }

    /// Mutable access to the parameters. Any trace recorded before this call
    /// becomes stale.
    pub fn params_mut(&mut self) -> &mut ParamRegistry<T> {
        self.generation += 1;
        &mut self.params
    }

    pub fn linear_layer_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, Layer::Linear { .. })).count()
    }

    fn slope(&self, id: ParamId) -> T {
        self.params.tensor(id).as_slice()[0]
    }

    /// Forward pass over a batch (one patch pair per row).
    pub fn forward(&self, x: &Tensor2D<T>, y: &Tensor2D<T>) -> Result<ForwardTrace<T>> {
        let n = self.config.input_dim;
        if x.cols() != n || y.cols() != n || x.rows() != y.rows() {
            return Err(Error::shape(
                "model forward",
                format!(
                    "inputs {}x{} and {}x{}, model expects {n} features",
                    x.rows(),
                    x.cols(),
                    y.rows(),
                    y.cols()
                ),
            ));
        }
        let bound = T::from_f64(NORMALIZED_BOUND);
        if x.max_abs() > bound || y.max_abs() > bound {
            log::warn!(
                "input outside [-0.5, 0.5] (max |x| = {}, max |y| = {}); patches are expected to be normalized",
                x.max_abs(),
                y.max_abs()
            );
        }

        let mut outputs: Vec<Tensor2D<T>> = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (out, cache) = match *layer {
                Layer::Concat => (concat_forward_batch(x, y)?, LayerCache::None),
                Layer::CauRankOne { u, v } => {
                    let (h, c) = cau_rankone_forward_batch(self.params.tensor(u), self.params.tensor(v), x, y)?;
                    (h, LayerCache::Cau(c))
                }
                Layer::BilinearRankOne { u, v } => {
                    let (h, c) = bilinear_rankone_forward_batch(self.params.tensor(u), self.params.tensor(v), x, y)?;
                    (h, LayerCache::Bilinear(c))
                }
                _ => {
                    let input = &outputs[i - 1];
                    match *layer {
                        Layer::SumPool { group } => (sumpool_forward_batch(input, group)?, LayerCache::None),
                        Layer::Softmin => (softmin_forward_batch(input), LayerCache::None),
                        Layer::L2Norm => {
                            let (o, norms) = l2norm_forward_batch(input);
                            (o, LayerCache::Norms(norms))
                        }
                        Layer::Linear { w, bias } => (
                            linear_forward_batch(self.params.tensor(w), self.params.tensor(bias), input)?,
                            LayerCache::None,
                        ),
                        Layer::PRelu { slope } => (prelu_forward_batch(self.slope(slope), input), LayerCache::None),
                        Layer::Concat | Layer::CauRankOne { .. } | Layer::BilinearRankOne { .. } => unreachable!(),
                    }
                }
            };
            outputs.push(out);
            caches.push(cache);
        }
        Ok(ForwardTrace {
            x: x.clone(),
            y: y.clone(),
            outputs,
            caches,
            generation: self.generation,
        })
    }

    /// Predictions for a batch.
    pub fn predict(&self, x: &Tensor2D<T>, y: &Tensor2D<T>) -> Result<Tensor2D<T>> {
        let mut trace = self.forward(x, y)?;
        Ok(trace.outputs.pop().expect("non-empty model"))
    }

    /// Backward pass. Returns one gradient per registry entry, in registry
    /// order, summed over the batch rows of `grad_z`.
    pub fn backward(&self, trace: &ForwardTrace<T>, grad_z: &Tensor2D<T>) -> Result<Vec<Tensor2D<T>>> {
        if trace.generation != self.generation || trace.depth() != self.layers.len() {
            return Err(Error::InvalidArgument(
                "stale trace: parameters changed since the forward pass".into(),
            ));
        }
        if grad_z.shape() != trace.output().shape() {
            return Err(Error::shape(
                "model backward",
                format!(
                    "gradZ {}x{} vs output {}x{}",
                    grad_z.rows(),
                    grad_z.cols(),
                    trace.output().rows(),
                    trace.output().cols()
                ),
            ));
        }
        let mut grads: Vec<Option<Tensor2D<T>>> = vec![None; self.params.len()];
        let mut g = grad_z.clone();
        for i in (0..self.layers.len()).rev() {
            let input = if i > 0 { Some(&trace.outputs[i - 1]) } else { None };
            g = match (self.layers[i], &trace.caches[i]) {
                (Layer::Concat, _) => break,
                (Layer::CauRankOne { u, v }, LayerCache::Cau(c)) => {
                    let r = cau_rankone_backward_batch(
                        self.params.tensor(u),
                        self.params.tensor(v),
                        &trace.x,
                        &trace.y,
                        c,
                        &g,
                        false,
                    )?;
                    grads[u] = Some(r.grad_u);
                    grads[v] = Some(r.grad_v);
                    break;
                }
                (Layer::BilinearRankOne { u, v }, LayerCache::Bilinear(c)) => {
                    let r = bilinear_rankone_backward_batch(
                        self.params.tensor(u),
                        self.params.tensor(v),
                        &trace.x,
                        &trace.y,
                        c,
                        &g,
                        false,
                    )?;
                    grads[u] = Some(r.grad_u);
                    grads[v] = Some(r.grad_v);
                    break;
                }
                (Layer::SumPool { group }, _) => sumpool_backward_batch(&g, group)?,
                (Layer::Softmin, _) => softmin_backward_batch(&trace.outputs[i], &g)?,
                (Layer::L2Norm, LayerCache::Norms(norms)) => l2norm_backward_batch(&trace.outputs[i], norms, &g)?,
                (Layer::Linear { w, bias }, _) => {
                    let input = input.expect("linear layer is never first");
                    let need_input = i > 0 && !matches!(self.layers[i - 1], Layer::Concat);
                    let r = linear_backward_batch(self.params.tensor(w), input, &g, need_input)?;
                    grads[w] = Some(r.grad_w);
                    grads[bias] = Some(r.grad_bias);
                    match r.grad_in {
                        Some(gi) => gi,
                        None => break,
                    }
                }
                (Layer::PRelu { slope }, _) => {
                    let input = input.expect("prelu is never first");
                    let (gi, gs) = prelu_backward_batch(self.slope(slope), input, &g)?;
                    grads[slope] = Some(Tensor2D::filled(1, 1, gs));
                    gi
                }
                (layer, _) => {
                    return Err(Error::InvalidArgument(format!(
                        "trace cache does not match layer {}",
                        layer.name()
                    )))
                }
            };
        }
        grads
            .into_iter()
            .zip(self.params.entries())
            .map(|(g, e)| {
                g.ok_or_else(|| Error::InvalidArgument(format!("no gradient reached parameter '{}'", e.name)))
            })
            .collect()
    }
}
