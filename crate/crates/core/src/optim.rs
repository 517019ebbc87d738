//! Optimizers: Adam for unconstrained weights and the multiplicative update
//! for non-negative weights, sharing one step-decay schedule.
//!
//! The multiplicative update splits the gradient into two positive parts,
//! `grad = plus - minus` with
//!
//! ```text
//! plus  = (|grad| + grad) / 2 + eps
//! minus = (|grad| - grad) / 2 + eps
//! ```
//!
//! and sets `W <- W o (minus / plus)^eta`. Every factor is positive, so a
//! positive `W` stays positive.

use crate::error::{Error, Result};
use crate::linalg::{Real, Tensor2D};
use crate::model::{Constraint, ParamRegistry};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Signed split of a gradient, evaluated in double precision.
pub fn grad_split<T: Real>(grad: &Tensor2D<T>, eps: f64) -> Result<(Tensor2D<f64>, Tensor2D<f64>)> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let g: Tensor2D<f64> = grad.cast();
    let plus = g.map(|v| 0.5 * (v.abs() + v) + eps);
    let minus = g.map(|v| 0.5 * (v.abs() - v) + eps);
    Ok((plus, minus))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MulUpdateState {
    /// Exponent applied to the gradient ratio (the learning rate).
    pub eta: f64,
    pub eps: f64,
}

impl MulUpdateState {
    pub fn new(eta: f64, eps: f64) -> Result<Self> {
        if !(eta > 0.0) || !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "multiplicative update needs eta > 0 and eps > 0, got eta={eta}, eps={eps}"
            )));
        }
        Ok(MulUpdateState { eta, eps })
    }
}

/// `W o (minus / plus)^eta`, computed as `W exp(eta ln(minus / plus))`
/// in double precision. Results that underflow the storage type are held at
/// its smallest positive normal value, overflows at its largest finite one.
pub fn mul_step<T: Real>(w: &Tensor2D<T>, grad: &Tensor2D<T>, state: &MulUpdateState) -> Result<Tensor2D<T>> {
    w.check_same_shape("mul_step", grad)?;
    if let Some((i, v)) = w.as_slice().iter().enumerate().find(|(_, v)| !(**v > T::zero())) {
        return Err(Error::Contract(format!(
            "multiplicative update needs strictly positive weights, element {i} is {v}"
        )));
    }
    let floor = T::min_positive_value();
    let ceil = T::max_value();
    let eps = state.eps;
    let data = w
        .as_slice()
        .iter()
        .zip(grad.as_slice())
        .map(|(&wv, &g)| {
            let g = g.as_f64();
            let plus = 0.5 * (g.abs() + g) + eps;
            let minus = 0.5 * (g.abs() - g) + eps;
            let log_ratio = state.eta * (minus / plus).ln();
            let updated = T::from_f64(wv.as_f64() * log_ratio.exp());
            if updated >= floor {
                updated.min(ceil)
            } else {
                floor
            }
        })
        .collect();
    Tensor2D::new(w.rows(), w.cols(), data)
}

/// Gradient step followed by clipping at zero. Only for ablations; it is
/// known to train poorly.
pub fn projected_step<T: Real>(w: &Tensor2D<T>, grad: &Tensor2D<T>, lr: f64) -> Result<Tensor2D<T>> {
    w.check_same_shape("projected_step", grad)?;
    let lr = T::from_f64(lr);
    let data = w
        .as_slice()
        .iter()
        .zip(grad.as_slice())
        .map(|(&wv, &g)| (wv - lr * g).max(T::zero()))
        .collect();
    Tensor2D::new(w.rows(), w.cols(), data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Tensor2D<T>,
    pub v: Tensor2D<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(rows: usize, cols: usize) -> Self {
        AdamState {
            m: Tensor2D::zeros(rows, cols),
            v: Tensor2D::zeros(rows, cols),
            t: 0,
        }
    }
}

/// One Adam step with bias correction, in place.
pub fn adam_step<T: Real>(
    param: &mut Tensor2D<T>,
    grad: &Tensor2D<T>,
    state: &mut AdamState<T>,
    alpha: f64,
    hyper: &AdamHyper,
) -> Result<()> {
    param.check_same_shape("adam_step", grad)?;
    param.check_same_shape("adam_step", &state.m)?;
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::from_f64(hyper.beta1), T::from_f64(hyper.beta2));
    let (c1, c2) = (T::one() - b1, T::one() - b2);
    let bias1 = 1.0 - hyper.beta1.powi(t);
    let bias2 = 1.0 - hyper.beta2.powi(t);
    let step = T::from_f64(alpha / bias1);
    let root_bias2 = T::from_f64(bias2.sqrt());
    let eps = T::from_f64(hyper.eps);
    let iter = param
        .as_mut_slice()
        .iter_mut()
        .zip(grad.as_slice())
        .zip(state.m.as_mut_slice().iter_mut().zip(state.v.as_mut_slice()));
    for ((p, &g), (m, v)) in iter {
        *m = b1 * *m + c1 * g;
        *v = b2 * *v + c2 * g * g;
        // alpha m_hat / (sqrt(v_hat) + eps)
        *p = *p - step * *m / (v.sqrt() / root_bias2 + eps);
    }
    Ok(())
}

/// Both learning rates are multiplied by `decay_factor` after every
/// `decay_every` updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub decay_factor: f64,
    pub decay_every: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            decay_factor: 0.95,
            decay_every: 500,
        }
    }
}

/// Rates to use after update number `step` (1-based) has completed.
pub fn schedule_tick(step: u64, sched: &LrSchedule, alpha: f64, eta: f64) -> (f64, f64) {
    if step > 0 && sched.decay_every > 0 && step.is_multiple_of(sched.decay_every) {
        (alpha * sched.decay_factor, eta * sched.decay_factor)
    } else {
        (alpha, eta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSettings {
    pub alpha0: f64,
    pub eta0: f64,
    pub eps_mul: f64,
    pub schedule: LrSchedule,
    pub adam: AdamHyper,
    /// Replace the multiplicative update by projected gradient descent
    /// (ablation only).
    pub projected: bool,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            alpha0: 0.005,
            eta0: 0.005,
            eps_mul: 1e-20,
            schedule: LrSchedule::default(),
            adam: AdamHyper::default(),
            projected: false,
        }
    }
}

/// Routes each registry entry to Adam or the multiplicative update according
/// to its constraint, and advances the shared schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer<T> {
    pub settings: OptimizerSettings,
    pub alpha: f64,
    pub eta: f64,
    pub step: u64,
    /// One entry per registry parameter; `None` for constrained ones.
    pub adam: Vec<Option<AdamState<T>>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(params: &ParamRegistry<T>, settings: OptimizerSettings) -> Self {
        let adam = params
            .entries()
            .iter()
            .map(|e| match e.constraint {
                Constraint::Unconstrained => Some(AdamState::new(e.tensor.rows(), e.tensor.cols())),
                Constraint::NonNegative => None,
            })
            .collect();
        Optimizer {
            settings,
            alpha: settings.alpha0,
            eta: settings.eta0,
            step: 0,
            adam,
        }
    }

    /// Applies one update with batch-averaged gradients (registry order).
    pub fn update(&mut self, params: &mut ParamRegistry<T>, grads: &[Tensor2D<T>]) -> Result<()> {
        if grads.len() != params.len() || self.adam.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        let mul = MulUpdateState::new(self.eta, self.settings.eps_mul)?;
        for ((entry, grad), adam) in params.entries_mut().iter_mut().zip(grads).zip(&mut self.adam) {
            match (entry.constraint, adam) {
                (Constraint::Unconstrained, Some(state)) => {
                    adam_step(&mut entry.tensor, grad, state, self.alpha, &self.settings.adam)?
                }
                (Constraint::NonNegative, None) => {
                    entry.tensor = if self.settings.projected {
                        projected_step(&entry.tensor, grad, self.eta)?
                    } else {
                        mul_step(&entry.tensor, grad, &mul)?
                    };
                }
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "optimizer state does not match constraint of '{}'",
                        entry.name
                    )))
                }
            }
        }
        self.step += 1;
        let (a, e) = schedule_tick(self.step, &self.settings.schedule, self.alpha, self.eta);
        self.alpha = a;
        self.eta = e;
        Ok(())
    }
}
