//! Central finite-difference checks of every backward pass.
//!
//! Each check draws its tensors at random, projects the layer output onto a
//! random direction `R` to get the scalar `L = sum(R o f)`, and compares the
//! analytic gradient (the backward pass fed with `R`) against
//! `(L(t + h) - L(t - h)) / 2h`, element by element.

use std::fmt;

use crate::layers::bilinear::{
    bilinear_rankone_backward_batch, bilinear_rankone_forward_batch, concat_backward_batch, concat_forward_batch,
};
use crate::layers::cau::{
    cau_backward_full, cau_forward_full, cau_rankone_backward_batch, cau_rankone_forward_batch, CauFullRankParams,
};
use crate::layers::competition::{softmin_backward_batch, softmin_forward_batch};
use crate::layers::dense::{linear_backward_batch, linear_forward_batch, prelu_backward_batch, prelu_forward_batch};
use crate::layers::loss::mse_loss_batch;
use crate::layers::pooling::{
    l2norm_backward_batch, l2norm_forward_batch, sumpool_backward_batch, sumpool_forward_batch,
};
use crate::linalg::{Rng, Tensor2D};
use crate::model::{build_model, Constraint, Layer, Model, ModelConfig, ModelKind};
use crate::Result;

/// Inputs closer than this to a PReLU kink are redrawn.
pub const KINK_MARGIN: f64 = 1e-3;
const MAX_REDRAWS: usize = 1000;

/// How a checked tensor is drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Uniform(f64, f64),
    /// Strictly positive, at least `10 h` for the default step.
    Positive(f64, f64),
    /// Uniform on `[lo, hi]` with `|v| >= margin`.
    AwayFromZero {
        lo: f64,
        hi: f64,
        margin: f64,
    },
}

impl Init {
    fn draw(self, rng: &mut Rng) -> f64 {
        match self {
            Init::Uniform(lo, hi) | Init::Positive(lo, hi) => rng.uniform(lo, hi),
            Init::AwayFromZero { lo, hi, margin } => loop {
                let v = rng.uniform(lo, hi);
                if v.abs() >= margin {
                    return v;
                }
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
    /// Whether this tensor's gradient is compared.
    pub check: bool,
}

impl TensorSpec {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, init: Init) -> Self {
        TensorSpec {
            name: name.into(),
            rows,
            cols,
            init,
            check: true,
        }
    }

    fn fixed(mut self) -> Self {
        self.check = false;
        self
    }
}

/// A differentiable map from a list of tensors to one output tensor.
pub trait GradCheckable {
    fn name(&self) -> String;
    fn tensor_specs(&self) -> Vec<TensorSpec>;
    fn forward(&self, tensors: &[Tensor2D<f64>]) -> Result<Tensor2D<f64>>;
    /// One gradient per tensor (unchecked tensors may get zeros).
    fn backward(&self, tensors: &[Tensor2D<f64>], grad_out: &Tensor2D<f64>) -> Result<Vec<Tensor2D<f64>>>;
    /// Elements whose analytic and numeric gradients are both below this
    /// magnitude are counted as negligible instead of compared.
    fn negligible(&self) -> f64 {
        0.0
    }

    /// Rejects draws at non-differentiable points.
    fn admissible(&self, _tensors: &[Tensor2D<f64>]) -> Result<bool> {
        Ok(true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub trials: usize,
    pub step: f64,
    pub tol: f64,
    pub seed: u64,
    /// Flip the sign of the first checked analytic gradient.
    pub corrupt: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            trials: 100,
            step: 1e-5,
            tol: 1e-4,
            seed: 0,
            corrupt: false,
        }
    }
}

/// Location of the largest relative error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorstIndex {
    pub trial: usize,
    pub tensor: String,
    pub element: usize,
}

impl fmt::Display for WorstIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "trial {} {}[{}]", self.trial, self.tensor, self.element)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckResult {
    pub layer_name: String,
    pub max_rel_error: f64,
    pub worst_index: Option<WorstIndex>,
    pub pass: bool,
    /// Elements skipped as negligible.
    pub skipped: usize,
}

impl fmt::Display for GradCheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<18} max rel error {:.3e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.layer_name,
            self.max_rel_error
        )?;
        if let Some(w) = &self.worst_index {
            write!(f, " at {w}")?;
        }
        if self.skipped > 0 {
            write!(f, " ({} negligible elements skipped)", self.skipped)?;
        }
        Ok(())
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn projected(layer: &dyn GradCheckable, tensors: &[Tensor2D<f64>], r: &Tensor2D<f64>) -> Result<f64> {
    let out = layer.forward(tensors)?;
    Ok(out.as_slice().iter().zip(r.as_slice()).map(|(a, b)| a * b).sum())
}

fn draw_tensors(specs: &[TensorSpec], rng: &mut Rng) -> Vec<Tensor2D<f64>> {
    specs
        .iter()
        .map(|s| Tensor2D::from_fn(s.rows, s.cols, |_, _| s.init.draw(rng)))
        .collect()
}

/// Runs `config.trials` seeded trials. Errors from the layer itself are
/// reported as a failed check.
pub fn check_layer(layer: &dyn GradCheckable, config: &GradCheckConfig) -> GradCheckResult {
    let mut result = GradCheckResult {
        layer_name: layer.name(),
        max_rel_error: 0.0,
        worst_index: None,
        pass: false,
        skipped: 0,
    };
    match run_trials(layer, config, &mut result) {
        Ok(()) => result.pass = result.max_rel_error < config.tol,
        Err(e) => {
            log::error!("{}: {e}", result.layer_name);
            result.max_rel_error = f64::INFINITY;
        }
    }
    result
}

fn run_trials(layer: &dyn GradCheckable, config: &GradCheckConfig, result: &mut GradCheckResult) -> Result<()> {
    let specs = layer.tensor_specs();
    let h = config.step;
    for trial in 0..config.trials {
        let mut rng = Rng::substream(config.seed, trial as u64);
        let mut tensors = draw_tensors(&specs, &mut rng);
        let mut redraws = 0;
        while !layer.admissible(&tensors)? {
            redraws += 1;
            if redraws > MAX_REDRAWS {
                return Err(crate::Error::InvalidArgument(format!(
                    "{}: no admissible draw after {MAX_REDRAWS} attempts",
                    layer.name()
                )));
            }
            tensors = draw_tensors(&specs, &mut rng);
        }
        let out = layer.forward(&tensors)?;
        let r = Tensor2D::from_fn(out.rows(), out.cols(), |_, _| PROJECTION.draw(&mut rng));
        let mut analytic = layer.backward(&tensors, &r)?;
        if config.corrupt {
            if let Some(i) = specs.iter().position(|s| s.check) {
                analytic[i].map_inplace(|v| -v);
            }
        }
        for (ti, spec) in specs.iter().enumerate() {
            if !spec.check {
                continue;
            }
            for e in 0..tensors[ti].len() {
                let orig = tensors[ti].as_slice()[e];
                tensors[ti].as_mut_slice()[e] = orig + h;
                let plus = projected(layer, &tensors, &r)?;
                tensors[ti].as_mut_slice()[e] = orig - h;
                let minus = projected(layer, &tensors, &r)?;
                tensors[ti].as_mut_slice()[e] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let a = analytic[ti].as_slice()[e];
                if a.abs().max(numeric.abs()) < layer.negligible() {
                    result.skipped += 1;
                    continue;
                }
                let err = relative_error(a, numeric);
                if err > result.max_rel_error || result.worst_index.is_none() {
                    result.max_rel_error = result.max_rel_error.max(err);
                    if err >= result.max_rel_error {
                        result.worst_index = Some(WorstIndex {
                            trial,
                            tensor: spec.name.clone(),
                            element: e,
                        });
                    }
                }
            }
        }
    }
    Ok(())
}

/// Projection weights stay away from zero so that no output is ignored.
const PROJECTION: Init = Init::AwayFromZero {
    lo: -1.0,
    hi: 1.0,
    margin: 0.1,
};
/// Smallest `|a_i - b_j|` for the full-rank CAU, whose weight gradient
/// vanishes quadratically as the two entries meet.
pub const CONTRAST_MARGIN: f64 = 0.05;

const BATCH: usize = 3;
pub const MODEL_NEGLIGIBLE: f64 = 1e-6;
const INPUT: Init = Init::Uniform(-0.5, 0.5);
const WIDE: Init = Init::Uniform(-1.0, 1.0);
const POSITIVE: Init = Init::Positive(0.01, 1.0);

pub struct LinearCheck {
    pub fan_in: usize,
    pub fan_out: usize,
}

impl GradCheckable for LinearCheck {
    fn name(&self) -> String {
        "linear".into()
    }

    fn tensor_specs(&self) -> Vec<TensorSpec> {
        vec![
            TensorSpec::new("w", self.fan_out, self.fan_in, WIDE),
            TensorSpec::new("bias", 1, self.fan_out, WIDE),
            TensorSpec::new("x", BATCH, self.fan_in, WIDE),
        ]
    }

    fn forward(&self, t: &[Tensor2D<f64>]) -> Result<Tensor2D<f64>> {
        linear_forward_batch(&t[0], &t[1], &t[2])
    }

    fn backward(&self, t: &[Tensor2D<f64>], g: &Tensor2D<f64>) -> Result<Vec<Tensor2D<f64>>> {
        let r = linear_backward_batch(&t[0], &t[2], g, true)?;
        Ok(vec![r.grad_w, r.grad_bias, r.grad_in.expect("requested")])
    }
}

pub struct PReluCheck {
    pub width: usize,
}

impl GradCheckable for PReluCheck {
    fn name(&self) -> String {
        "prelu".into()
    }

    fn tensor_specs(&self) -> Vec<TensorSpec> {
        vec![
            TensorSpec::new("slope", 1, 1, Init::Uniform(0.05, 0.5)),
            TensorSpec::new(
                "x",
                BATCH,
                self.width,
                Init::AwayFromZero {
                    lo: -1.0,
                    hi: 1.0,
                    margin: KINK_MARGIN,
                },
            ),
        ]
    }

    fn forward(&self, t: &[Tensor2D<f64>]) -> Result<Tensor2D<f64>> {
        Ok(prelu_forward_batch(t[0].as_slice()[0], &t[1]))
    }

    fn backward(&self, t: &[Tensor2D<f64>], g: &Tensor2D<f64>) -> Result<Vec<Tensor2D<f64>>> {
        let (gi, gs) = prelu_backward_batch(t[0].as_slice()[0], &t[1], g)?;
        Ok(vec![Tensor2D::filled(1, 1, gs), gi])
    }
}

pub struct ConcatCheck {
    pub n: usize,
}

impl GradCheckable for ConcatCheck {
    fn name(&self) -> String {
        "concat".into()
    }

    fn tensor_specs(&self) -> Vec<TensorSpec> {
        vec![
            TensorSpec::new("a", BATCH, self.n, INPUT),
            TensorSpec::new("b", BATCH, self.n, INPUT),
        ]
    }

    fn forward(&self, t: &[Tensor2D<f64>]) -> Result<Tensor2D<f64>> {
        concat_forward_batch(&t[0], &t[1])
    }

    fn backward(&self, _t: &[Tensor2D<f64>], g: &Tensor2D<f64>) -> Result<Vec<Tensor2D<f64>>> {
        let (a, b) = concat_backward_batch(g, self.n)?;
        Ok(vec![a, b])
    }
}

pub struct BilinearCheck {
    pub n: usize,
    pub units: usize,
}

impl GradCheckable for BilinearCheck {
    fn name(&self) -> String {
        "bilinear_rankone".into()
    }

    fn tensor_specs(&self) -> Vec<TensorSpec> {
        vec![
            TensorSpec::new("u", self.units, self.n, WIDE),
            TensorSpec::new("v", self.units, self.n, WIDE),
            TensorSpec::new("a", BATCH, self.n, INPUT),
            TensorSpec::new("b", BATCH, self.n, INPUT),
        ]
    }

    fn forward(&self, t: &[Tensor2D<f64>]) -> Result<Tensor2D<f64>> {
        Ok(bilinear_rankone_forward_batch(&t[0], &t[1], &t[2], &t[3])?.0)
    }

    fn backward(&self, t: &[Tensor2D<f64>], g: &Tensor2D<f64>) -> Result<Vec<Tensor2D<f64>>> {
        let (_, cache) = bilinear_rankone_forward_batch(&t[0], &t[1], &t[2], &t[3])?;
        let r = bilinear_rankone_backward_batch(&t[0], &t[1], &t[2], &t[3], &cache, g, true)?;
        Ok(vec![
            r.grad_u,
            r.grad_v,
            r.grad_a.expect("requested"),
            r.grad_b.expect("requested"),
        ])
    }
}

pub struct CauRankOneCheck {
    pub n: usize,
    pub units: usize,
}

impl GradCheckable for CauRankOneCheck {
    fn name(&self) -> String {
        "cau_rankone".into()
    }

    fn tensor_specs(&self) -> Vec<TensorSpec> {
        vec![
            TensorSpec::new("u", self.units, self.n, POSITIVE),
            TensorSpec::new("v", self.units, self.n, POSITIVE),
            TensorSpec::new("a", BATCH, self.n, INPUT),
            TensorSpec::new("b", BATCH, self.n, INPUT),
        ]
    }

    fn forward(&self, t: &[Tensor2D<f64>]) -> Result<Tensor2D<f64>> {
        Ok(cau_rankone_forward_batch(&t[0], &t[1], &t[2], &t[3])?.0)
    }

    fn backward(&self, t: &[Tensor2D<f64>], g: &Tensor2D<f64>) -> Result<Vec<Tensor2D<f64>>> {
        let (_, cache) = cau_rankone_forward_batch(&t[0], &t[1], &t[2], &t[3])?;
        let r = cau_rankone_backward_batch(&t[0], &t[1], &t[2], &t[3], &cache, g, true)?;
        Ok(vec![
            r.grad_u,
            r.grad_v,
            r.grad_a.expect("requested"),
            r.grad_b.expect("requested"),
        ])
    }
}

/// Full-rank CAU on a single pair; the `K` weight matrices are stacked
/// vertically into one `(K n) x n` tensor.
pub struct CauFullCheck {
    pub n: usize,
    pub units: usize,
}

impl CauFullCheck {
    fn params(&self, stacked: &Tensor2D<f64>) -> Result<CauFullRankParams<f64>> {
        let n = self.n;
        CauFullRankParams::new(
            (0..self.units)
                .map(|k| Tensor2D::from_fn(n, n, |i, j| stacked.get(k * n + i, j)))
                .collect(),
        )
    }
}

impl GradCheckable for CauFullCheck {
    fn name(&self) -> String {
        "cau_full".into()
    }

    fn tensor_specs(&self) -> Vec<TensorSpec> {
        vec![
            TensorSpec::new("w", self.units * self.n, self.n, POSITIVE),
            TensorSpec::new("a", 1, self.n, INPUT),
            TensorSpec::new("b", 1, self.n, INPUT),
        ]
    }

    fn forward(&self, t: &[Tensor2D<f64>]) -> Result<Tensor2D<f64>> {
        let h = cau_forward_full(&self.params(&t[0])?, t[1].as_slice(), t[2].as_slice())?;
        Ok(Tensor2D::row_vector(&h))
    }

    fn backward(&self, t: &[Tensor2D<f64>], g: &Tensor2D<f64>) -> Result<Vec<Tensor2D<f64>>> {
        let r = cau_backward_full(&self.params(&t[0])?, t[1].as_slice(), t[2].as_slice(), g.as_slice())?;
        let n = self.n;
        let gw = Tensor2D::from_fn(self.units * n, n, |i, j| r.grad_w[i / n].get(i % n, j));
        Ok(vec![
            gw,
            Tensor2D::row_vector(&r.grad_a),
            Tensor2D::row_vector(&r.grad_b),
        ])
    }

    fn admissible(&self, t: &[Tensor2D<f64>]) -> Result<bool> {
        Ok(t[1]
            .as_slice()
            .iter()
            .all(|a| t[2].as_slice().iter().all(|b| (a - b).abs() >= CONTRAST_MARGIN)))
    }
}

pub struct SumPoolCheck {
    pub width: usize,
    pub group: usize,
}

impl GradCheckable for SumPoolCheck {
    fn name(&self) -> String {
        "sumpool".into()
    }

    fn tensor_specs(&self) -> Vec<TensorSpec> {
        vec![TensorSpec::new("h", BATCH, self.width, WIDE)]
    }

    fn forward(&self, t: &[Tensor2D<f64>]) -> Result<Tensor2D<f64>> {
        sumpool_forward_batch(&t[0], self.group)
    }

    fn backward(&self, _t: &[Tensor2D<f64>], g: &Tensor2D<f64>) -> Result<Vec<Tensor2D<f64>>> {
        Ok(vec![sumpool_backward_batch(g, self.group)?])
    }
}

pub struct L2NormCheck {
    pub width: usize,
}

impl GradCheckable for L2NormCheck {
    fn name(&self) -> String {
        "l2norm".into()
    }

    fn tensor_specs(&self) -> Vec<TensorSpec> {
        vec![TensorSpec::new("h", BATCH, self.width, WIDE)]
    }

    fn forward(&self, t: &[Tensor2D<f64>]) -> Result<Tensor2D<f64>> {
        Ok(l2norm_forward_batch(&t[0]).0)
    }

    fn backward(&self, t: &[Tensor2D<f64>], g: &Tensor2D<f64>) -> Result<Vec<Tensor2D<f64>>> {
        let (y, norms) = l2norm_forward_batch(&t[0]);
        Ok(vec![l2norm_backward_batch(&y, &norms, g)?])
    }
}

pub struct SoftminCheck {
    pub width: usize,
}

impl GradCheckable for SoftminCheck {
    fn name(&self) -> String {
        "softmin".into()
    }

    fn tensor_specs(&self) -> Vec<TensorSpec> {
        vec![TensorSpec::new("h", BATCH, self.width, Init::Uniform(-2.0, 2.0))]
    }

    fn forward(&self, t: &[Tensor2D<f64>]) -> Result<Tensor2D<f64>> {
        Ok(softmin_forward_batch(&t[0]))
    }

    fn backward(&self, t: &[Tensor2D<f64>], g: &Tensor2D<f64>) -> Result<Vec<Tensor2D<f64>>> {
        Ok(vec![softmin_backward_batch(&softmin_forward_batch(&t[0]), g)?])
    }
}

/// Batch MSE; the output is the 1x1 loss.
pub struct MseCheck {
    pub width: usize,
}

impl GradCheckable for MseCheck {
    fn name(&self) -> String {
        "mse".into()
    }

    fn tensor_specs(&self) -> Vec<TensorSpec> {
        vec![
            TensorSpec::new("pred", BATCH, self.width, WIDE),
            TensorSpec::new("target", BATCH, self.width, WIDE).fixed(),
        ]
    }

    fn forward(&self, t: &[Tensor2D<f64>]) -> Result<Tensor2D<f64>> {
        Ok(Tensor2D::filled(1, 1, mse_loss_batch(&t[0], &t[1])?.0))
    }

    fn backward(&self, t: &[Tensor2D<f64>], g: &Tensor2D<f64>) -> Result<Vec<Tensor2D<f64>>> {
        let (_, grad) = mse_loss_batch(&t[0], &t[1])?;
        Ok(vec![
            grad.scale(g.as_slice()[0]),
            Tensor2D::zeros(t[1].rows(), t[1].cols()),
        ])
    }
}

/// End-to-end check of a whole model; tensors are the patches `x`, `y`
/// (held fixed) followed by every registered parameter.
pub struct ModelCheck {
    model: Model<f64>,
}

impl ModelCheck {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        Ok(ModelCheck {
            model: build_model(config, &mut Rng::new(0))?,
        })
    }

    /// The tiny configuration: 6 inputs, 8 relation units pooled by 4,
    /// hidden widths 5, one output.
    pub fn tiny(kind: ModelKind) -> Self {
        let config = ModelConfig {
            kind,
            input_dim: 6,
            relation_units: 8,
            pooled_units: 2,
            hidden: vec![5, 5],
            z_dim: 1,
        };
        Self::new(&config).expect("tiny config is valid")
    }

    fn with_params(&self, t: &[Tensor2D<f64>]) -> Model<f64> {
        let mut m = self.model.clone();
        for (e, v) in m.params_mut().entries_mut().iter_mut().zip(&t[2..]) {
            e.tensor = v.clone();
        }
        m
    }
}

impl GradCheckable for ModelCheck {
    fn name(&self) -> String {
        format!("model_{}", self.model.config().kind.name())
    }

    fn tensor_specs(&self) -> Vec<TensorSpec> {
        let n = self.model.config().input_dim;
        let mut specs = vec![
            TensorSpec::new("x", BATCH, n, INPUT).fixed(),
            TensorSpec::new("y", BATCH, n, INPUT).fixed(),
        ];
        for e in self.model.params().entries() {
            let init = match e.constraint {
                Constraint::NonNegative => POSITIVE,
                Constraint::Unconstrained if e.name.ends_with("slope") => Init::Uniform(0.05, 0.5),
                Constraint::Unconstrained => WIDE,
            };
            specs.push(TensorSpec::new(e.name.clone(), e.tensor.rows(), e.tensor.cols(), init));
        }
        specs
    }

    fn forward(&self, t: &[Tensor2D<f64>]) -> Result<Tensor2D<f64>> {
        self.with_params(t).predict(&t[0], &t[1])
    }

    fn backward(&self, t: &[Tensor2D<f64>], g: &Tensor2D<f64>) -> Result<Vec<Tensor2D<f64>>> {
        let m = self.with_params(t);
        let trace = m.forward(&t[0], &t[1])?;
        let mut grads = vec![t[0].scale(0.0), t[1].scale(0.0)];
        grads.extend(m.backward(&trace, g)?);
        Ok(grads)
    }

    /// Deep products of small factors put some gradients near 1e-8, where
    /// the central difference is dominated by rounding.
    fn negligible(&self) -> f64 {
        MODEL_NEGLIGIBLE
    }

    fn admissible(&self, t: &[Tensor2D<f64>]) -> Result<bool> {
        let m = self.with_params(t);
        let trace = m.forward(&t[0], &t[1])?;
        Ok(m.layers().iter().enumerate().all(|(i, l)| {
            !matches!(l, Layer::PRelu { .. })
                || trace
                    .layer_output(i - 1)
                    .as_slice()
                    .iter()
                    .all(|v| v.abs() >= KINK_MARGIN)
        }))
    }
}

/// Every layer type of the three models, both CAU variants, the loss, and
/// the three tiny models end to end.
pub fn standard_checks() -> Vec<Box<dyn GradCheckable>> {
    vec![
        Box::new(ConcatCheck { n: 6 }),
        Box::new(LinearCheck { fan_in: 5, fan_out: 4 }),
        Box::new(PReluCheck { width: 5 }),
        Box::new(BilinearCheck { n: 6, units: 8 }),
        Box::new(CauRankOneCheck { n: 6, units: 8 }),
        Box::new(CauFullCheck { n: 6, units: 8 }),
        Box::new(SumPoolCheck { width: 8, group: 4 }),
        Box::new(L2NormCheck { width: 6 }),
        Box::new(SoftminCheck { width: 6 }),
        Box::new(MseCheck { width: 3 }),
        Box::new(ModelCheck::tiny(ModelKind::Ctn)),
        Box::new(ModelCheck::tiny(ModelKind::Bln)),
        Box::new(ModelCheck::tiny(ModelKind::Can)),
    ]
}

/// Runs the standard checks; `corrupt` names a check whose analytic
/// gradient is sign-flipped.
pub fn run_all(config: &GradCheckConfig, corrupt: Option<&str>) -> Vec<GradCheckResult> {
    standard_checks()
        .iter()
        .map(|c| {
            let cfg = GradCheckConfig {
                corrupt: corrupt == Some(c.name().as_str()),
                ..*config
            };
            check_layer(c.as_ref(), &cfg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(1e-9, 0.0), 1e-9 / 1e-8);
        assert_eq!(relative_error(2.0, 1.0), 0.5);
    }

    #[test]
    fn every_standard_check_passes() {
        for r in run_all(&GradCheckConfig::default(), None) {
            assert!(r.pass, "{r}");
        }
    }

    #[test]
    fn sign_flip_is_caught() {
        let cfg = GradCheckConfig {
            trials: 3,
            corrupt: true,
            ..Default::default()
        };
        let r = check_layer(&LinearCheck { fan_in: 5, fan_out: 4 }, &cfg);
        assert!(!r.pass);
        assert!(r.max_rel_error > 1.0);
        assert_eq!(r.worst_index.as_ref().unwrap().tensor, "w");
    }

    #[test]
    fn results_are_reproducible() {
        let cfg = GradCheckConfig {
            trials: 5,
            seed: 9,
            ..Default::default()
        };
        let a = check_layer(&CauRankOneCheck { n: 6, units: 8 }, &cfg);
        assert_eq!(a, check_layer(&CauRankOneCheck { n: 6, units: 8 }, &cfg));
    }

    #[test]
    fn report_covers_every_layer_type() {
        let names: Vec<String> = standard_checks().iter().map(|c| c.name()).collect();
        for l in [
            "concat",
            "linear",
            "prelu",
            "bilinear_rankone",
            "cau_rankone",
            "cau_full",
            "sumpool",
            "l2norm",
            "softmin",
        ] {
            assert!(names.iter().any(|n| n == l), "{l}");
        }
    }
}
