//! Parameter and transformation errors, and model evaluation.

use std::fmt;

use crate::data::homography::{build_homography, Homography, TaskKind};
use crate::data::realworld::PatchPair;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{Real, Tensor2D};
use crate::model::Model;

/// Unit-square corners used by the transformation error.
pub const CORNERS: [(f64, f64); 4] = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];

const EVAL_BATCH: usize = 1000;

/// `||z - z_hat||_2`.
pub fn parameter_error(z: &[f64], z_hat: &[f64]) -> Result<f64> {
    if z.len() != z_hat.len() {
        return Err(Error::shape(
            "parameter_error",
            format!("{} true parameters vs {} predicted", z.len(), z_hat.len()),
        ));
    }
    Ok(z.iter().zip(z_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

/// Corner-transfer error: `sum_i ||p_i' - p^_i'|| / sum_j ||p_j'||` over the
/// unit square, with each mapped corner dehomogenized to `(x, y, 1)`.
/// Unchanged when both matrices are scaled by the same non-zero constant.
pub fn transformation_error(h: &Homography, h_hat: &Homography) -> Result<f64> {
    h.inverse()?;
    h_hat.inverse()?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in CORNERS {
        let (px, py) = h.apply(x, y)?;
        let (qx, qy) = h_hat.apply(x, y)?;
        num += (px - qx).hypot(py - qy);
        den += (px * px + py * py + 1.0).sqrt();
    }
    Ok(num / den)
}

/// The homography for predicted parameters, without clamping to the
/// training ranges.
pub fn reconstruct_homography(task: TaskKind, z_hat: &[f64]) -> Result<Homography> {
    build_homography(task, z_hat)
}

/// Mean errors over one test set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub task: TaskKind,
    pub model: String,
    pub mean_param_error: f64,
    pub mean_trans_error: f64,
    pub n: usize,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "task,model,mean_param_error,mean_trans_error,n";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.task, self.model, self.mean_param_error, self.mean_trans_error, self.n
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row())
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<12} {:<6} {:>14} {:>14} {:>8}",
            "task", "model", "param error", "trans error", "n"
        )?;
        write!(
            f,
            "{:<12} {:<6} {:>14.6} {:>14.6} {:>8}",
            self.task.name(),
            self.model,
            self.mean_param_error,
            self.mean_trans_error,
            self.n
        )
    }
}

/// Accumulates per-sample errors in a fixed order.
#[derive(Debug, Default)]
struct Accumulator {
    param: f64,
    trans: f64,
    n: usize,
}

impl Accumulator {
    fn add_synthetic(&mut self, task: TaskKind, z: &[f64], z_hat: &[f64]) -> Result<()> {
        self.param += parameter_error(z, z_hat)?;
        self.trans += transformation_error(&build_homography(task, z)?, &reconstruct_homography(task, z_hat)?)?;
        self.n += 1;
        Ok(())
    }

    fn report(self, task: TaskKind, model: &str) -> Result<EvalReport> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("evaluation set is empty".into()));
        }
        Ok(EvalReport {
            task,
            model: model.to_string(),
            mean_param_error: self.param / self.n as f64,
            mean_trans_error: self.trans / self.n as f64,
            n: self.n,
        })
    }
}

/// Scores predictions (one row per sample) against the stored parameters.
pub fn evaluate_predictions(dataset: &Dataset, predictions: &Tensor2D<f64>, model: &str) -> Result<EvalReport> {
    if predictions.rows() != dataset.len() || predictions.cols() != dataset.z_dim() {
        return Err(Error::shape(
            "evaluate_predictions",
            format!(
                "{}x{} predictions for {} samples of dimension {}",
                predictions.rows(),
                predictions.cols(),
                dataset.len(),
                dataset.z_dim()
            ),
        ));
    }
    let mut acc = Accumulator::default();
    for (i, s) in dataset.iter().enumerate() {
        let z: Vec<f64> = s.z.iter().map(|&v| v as f64).collect();
        acc.add_synthetic(dataset.task, &z, predictions.row(i))?;
    }
    acc.report(dataset.task, model)
}

fn check_task<T: Real>(model: &Model<T>, task: TaskKind) -> Result<()> {
    if model.config().z_dim != task.z_dim() {
        return Err(Error::InvalidArgument(format!(
            "model predicts {} parameters but task {task} has {}",
            model.config().z_dim,
            task.z_dim()
        )));
    }
    Ok(())
}

/// Runs `model` over `dataset` in batches and scores it.
pub fn evaluate_model<T: Real>(model: &Model<T>, dataset: &Dataset, task: TaskKind) -> Result<EvalReport> {
    if dataset.task != task {
        return Err(Error::InvalidArgument(format!(
            "dataset holds {} samples, evaluation asked for {task}",
            dataset.task
        )));
    }
    check_task(model, task)?;
    let mut preds = Vec::with_capacity(dataset.len() * task.z_dim());
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let (x, y, _) = dataset.batch::<T>(chunk);
        preds.extend(model.predict(&x, &y)?.as_slice().iter().map(|v| v.as_f64()));
    }
    let preds = Tensor2D::new(dataset.len(), task.z_dim(), preds)?;
    evaluate_predictions(dataset, &preds, model.config().kind.name())
}

/// Number of leading projective parameters that `task` shares with the
/// real-world ground truth, if any.
fn comparable_params(task: TaskKind) -> Result<usize> {
    match task {
        TaskKind::Affine => Ok(4),
        TaskKind::Projective => Ok(6),
        other => Err(Error::InvalidArgument(format!(
            "real-world pairs carry general homographies; {other} parameters cannot be compared"
        ))),
    }
}

/// Scores predictions for real-world pairs against their stored homographies.
pub fn evaluate_pair_predictions(
    pairs: &[PatchPair],
    task: TaskKind,
    predictions: &Tensor2D<f64>,
    model: &str,
) -> Result<EvalReport> {
    let k = comparable_params(task)?;
    if predictions.rows() != pairs.len() || predictions.cols() != task.z_dim() {
        return Err(Error::shape(
            "evaluate_pair_predictions",
            format!(
                "{}x{} predictions for {} pairs",
                predictions.rows(),
                predictions.cols(),
                pairs.len()
            ),
        ));
    }
    let mut acc = Accumulator::default();
    for (i, pair) in pairs.iter().enumerate() {
        let z_hat = predictions.row(i);
        let z: Vec<f64> = pair.z[..k].iter().map(|&v| v as f64).collect();
        acc.param += parameter_error(&z, z_hat)?;
        acc.trans += transformation_error(&pair.h, &reconstruct_homography(task, z_hat)?)?;
        acc.n += 1;
    }
    acc.report(task, model)
}

pub fn evaluate_model_on_pairs<T: Real>(model: &Model<T>, pairs: &[PatchPair], task: TaskKind) -> Result<EvalReport> {
    check_task(model, task)?;
    comparable_params(task)?;
    let mut preds = Vec::with_capacity(pairs.len() * task.z_dim());
    for chunk in pairs.chunks(EVAL_BATCH) {
        let dim = chunk[0].x.len();
        let gather = |f: &dyn Fn(&PatchPair) -> &[f32]| {
            let data = chunk
                .iter()
                .flat_map(|p| f(p).iter().map(|&v| T::from_f64(v as f64)))
                .collect();
            Tensor2D::new(chunk.len(), dim, data)
        };
        let x = gather(&|p| &p.x)?;
        let y = gather(&|p| &p.y)?;
        preds.extend(model.predict(&x, &y)?.as_slice().iter().map(|v| v.as_f64()));
    }
    let preds = Tensor2D::new(pairs.len(), task.z_dim(), preds)?;
    evaluate_pair_predictions(pairs, task, &preds, model.config().kind.name())
}
