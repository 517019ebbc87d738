//! Relation learning between image patches with contrast association units.
//!
//! A network infers the geometric transformation `z` relating two patches
//! `x` and `y` as `z = g(R(x, y))`, where `R` is a relation layer and `g` a
//! small perceptron. Three relation layers are provided: concatenation,
//! rank-one bilinear units, and rank-one contrast association units (CAU),
//! which sum non-negatively weighted squared differences between the two
//! inputs and are therefore invariant to a common intensity shift.
//!
//! Non-negative CAU factors are trained with a multiplicative update that
//! keeps them strictly positive; everything else uses Adam.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
pub use linalg::{gemm, FlushDenormals, Real, Rng, Tensor2D};
pub use model::{build_model, Constraint, Model, ModelConfig, ModelKind, ParamRegistry};
