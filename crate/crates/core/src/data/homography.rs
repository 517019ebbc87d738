//! The five transformation tasks and their homography parametrizations.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Homographies with `|det|` at or below this are treated as singular.
pub const SINGULAR_DET: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Translation,
    Rotation,
    Scaling,
    Affine,
    Projective,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::Translation,
        TaskKind::Rotation,
        TaskKind::Scaling,
        TaskKind::Affine,
        TaskKind::Projective,
    ];

    /// Identifier stored in dataset and checkpoint headers.
    pub fn id(self) -> u8 {
        match self {
            TaskKind::Translation => 0,
            TaskKind::Rotation => 1,
            TaskKind::Scaling => 2,
            TaskKind::Affine => 3,
            TaskKind::Projective => 4,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Translation => "translation",
            TaskKind::Rotation => "rotation",
            TaskKind::Scaling => "scaling",
            TaskKind::Affine => "affine",
            TaskKind::Projective => "projective",
        }
    }

    pub fn z_dim(self) -> usize {
        self.ranges().len()
    }

    /// Sampling range of each parameter. Rotation is in degrees.
    pub fn ranges(self) -> &'static [(f64, f64)] {
        match self {
            TaskKind::Translation => &[(-5.0, 5.0), (-5.0, 5.0)],
            TaskKind::Rotation => &[(-45.0, 45.0)],
            TaskKind::Scaling => &[(0.5, 2.0), (0.5, 2.0)],
            TaskKind::Affine => &[(-0.5, 0.5); 4],
            TaskKind::Projective => &[
                (-0.5, 0.5),
                (-0.5, 0.5),
                (-0.5, 0.5),
                (-0.5, 0.5),
                (-0.01, 0.01),
                (-0.01, 0.01),
            ],
        }
    }

    pub fn spec(self) -> TaskSpec {
        TaskSpec { kind: self }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        TaskKind::ALL.into_iter().find(|t| t.name() == lower).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown task '{s}', expected one of: translation, rotation, scaling, affine, projective"
            ))
        })
    }
}

/// A task together with its parameter ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskSpec {
    pub kind: TaskKind,
}

impl TaskSpec {
    pub fn z_dim(&self) -> usize {
        self.kind.z_dim()
    }

    pub fn ranges(&self) -> &'static [(f64, f64)] {
        self.kind.ranges()
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.len() == self.z_dim() && z.iter().zip(self.ranges()).all(|(&v, &(lo, hi))| v >= lo && v <= hi)
    }
}

/// A 3x3 matrix acting on homogeneous points `(x, y, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(pub Matrix3<f64>);

impl Homography {
    pub fn identity() -> Self {
        Homography(Matrix3::identity())
    }

    pub fn from_row_major(v: [f64; 9]) -> Self {
        Homography(Matrix3::from_row_slice(&v))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Homography(Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0))
    }

    pub fn det(&self) -> f64 {
        self.0.determinant()
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.det();
        if !(det.abs() > SINGULAR_DET) {
            return Err(Error::SingularHomography { det });
        }
        self.0
            .try_inverse()
            .map(Homography)
            .ok_or(Error::SingularHomography { det })
    }

    pub fn compose(&self, then: &Homography) -> Homography {
        Homography(then.0 * self.0)
    }

    pub fn scaled(&self, c: f64) -> Homography {
        Homography(self.0 * c)
    }

    /// `H (x, y, 1)^T` without dehomogenization.
    pub fn apply_homogeneous(&self, x: f64, y: f64) -> Vector3<f64> {
        self.0 * Vector3::new(x, y, 1.0)
    }

    /// Maps a point and divides by the third coordinate.
    pub fn apply(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        let p = self.apply_homogeneous(x, y);
        if !(p.z.abs() > f64::EPSILON) {
            return Err(Error::PointAtInfinity { w: p.z });
        }
        Ok((p.x / p.z, p.y / p.z))
    }
}

fn check_z(task: TaskKind, z: &[f64]) -> Result<()> {
    if z.len() != task.z_dim() {
        return Err(Error::shape(
            "build_homography",
            format!("{task} takes {} parameters, got {}", task.z_dim(), z.len()),
        ));
    }
    Ok(())
}

/// The homography for parameters `z`. Values outside the training ranges are
/// accepted.
pub fn build_homography(task: TaskKind, z: &[f64]) -> Result<Homography> {
    check_z(task, z)?;
    let m = match task {
        TaskKind::Translation => Matrix3::new(1.0, 0.0, z[0], 0.0, 1.0, z[1], 0.0, 0.0, 1.0),
        TaskKind::Rotation => {
            let theta = z[0].to_radians();
            let (s, c) = theta.sin_cos();
            Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
        }
        TaskKind::Scaling => Matrix3::new(z[0], 0.0, 0.0, 0.0, z[1], 0.0, 0.0, 0.0, 1.0),
        TaskKind::Affine => Matrix3::new(1.0 + z[0], z[1], 0.0, z[2], 1.0 + z[3], 0.0, 0.0, 0.0, 1.0),
        TaskKind::Projective => Matrix3::new(1.0 + z[0], z[1], 0.0, z[2], 1.0 + z[3], 0.0, z[4], z[5], 1.0),
    };
    Ok(Homography(m))
}

/// Projective parameters read back from a homography: the upper-left 2x2 of
/// `H / h33` minus the identity, then the first two entries of its third
/// row. Also returns the translation column, which the projective form does
/// not model.
pub fn projective_params(h: &Homography) -> Result<([f64; 6], [f64; 2])> {
    let h33 = h.0[(2, 2)];
    if !(h33.abs() > f64::EPSILON) {
        return Err(Error::InvalidArgument(format!(
            "homography has h33 = {h33}; cannot normalize"
        )));
    }
    let m = h.0 / h33;
    Ok((
        [
            m[(0, 0)] - 1.0,
            m[(0, 1)],
            m[(1, 0)],
            m[(1, 1)] - 1.0,
            m[(2, 0)],
            m[(2, 1)],
        ],
        [m[(0, 2)], m[(1, 2)]],
    ))
}
