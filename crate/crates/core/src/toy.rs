//! Translation detection with three hand-built CAUs.
//!
//! `a = (c1..c5)` and `b` is `a` shifted by `z in {-1, 0, 1}`. Unit `k` puts
//! unit weight on the diagonal where `a` and `b_k` agree, so exactly the
//! matching unit reads zero. Winner-take-all followed by the readout
//! `(-1, 0, 1) . h'` recovers `z`.

use std::fmt;

use crate::layers::cau::{cau_forward_full, CauFullRankParams};
use crate::layers::competition::wta;
use crate::linalg::{Rng, Tensor2D};
use crate::Result;

pub const TOY_LEN: usize = 5;
pub const READOUT: [f64; 3] = [-1.0, 0.0, 1.0];
pub const NEAR_TIE: f64 = 1e-9;

/// `W_1`, `W_2`, `W_3`: ones on the sub-diagonal, diagonal and
/// super-diagonal.
pub fn toy_weights() -> CauFullRankParams<f64> {
    let band = |offset: isize| {
        Tensor2D::from_fn(TOY_LEN, TOY_LEN, |i, j| {
            if i as isize - j as isize == offset {
                1.0
            } else {
                0.0
            }
        })
    };
    CauFullRankParams::new(vec![band(1), band(0), band(-1)]).expect("toy weights are non-negative")
}

/// `a` and `b` for the sequence `c = (c0..c6)` and shift `z`.
pub fn toy_pair(c: &[f64; 7], z: i32) -> (Vec<f64>, Vec<f64>) {
    let a = c[1..6].to_vec();
    let start = (1 - z) as usize;
    (a, c[start..start + TOY_LEN].to_vec())
}

/// `D(a, b)_{ij} = (a_i - b_j)^2`.
pub fn difference_matrix(a: &[f64], b: &[f64]) -> Tensor2D<f64> {
    Tensor2D::from_fn(a.len(), b.len(), |i, j| (a[i] - b[j]).powi(2))
}

/// CAU responses, WTA output and the read-out shift.
pub fn infer(params: &CauFullRankParams<f64>, a: &[f64], b: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let h = cau_forward_full(params, a, b)?;
    let winner = wta(&h)?;
    let z = winner.iter().zip(READOUT).map(|(w, r)| w * r).sum();
    Ok((h, winner, z))
}

#[derive(Debug, Clone)]
pub struct ToyReport {
    pub trials: usize,
    pub near_ties: usize,
    pub recovered: usize,
    pub example_a: Vec<f64>,
    pub example_b: Vec<f64>,
    pub example_d: Tensor2D<f64>,
    pub example_h: Vec<f64>,
}

impl ToyReport {
    /// Trials that were not excluded as near-ties.
    pub fn scored(&self) -> usize {
        self.trials - self.near_ties
    }

    pub fn all_recovered(&self) -> bool {
        self.recovered == self.scored()
    }
}

/// Gap between the two smallest responses.
fn margin(h: &[f64]) -> f64 {
    let mut s = h.to_vec();
    s.sort_by(f64::total_cmp);
    s[1] - s[0]
}

pub fn run_toy(trials: usize, seed: u64) -> Result<ToyReport> {
    let params = toy_weights();
    let mut rng = Rng::new(seed);
    let (mut near_ties, mut recovered) = (0, 0);
    for _ in 0..trials {
        let c: [f64; 7] = std::array::from_fn(|_| rng.unit());
        let z = rng.below(3) as i32 - 1;
        let (a, b) = toy_pair(&c, z);
        let (h, _, z_hat) = infer(&params, &a, &b)?;
        if margin(&h) < NEAR_TIE {
            near_ties += 1;
        } else if z_hat == z as f64 {
            recovered += 1;
        }
    }
    let c = [0.9, 0.1, 0.4, 0.8, 0.3, 0.6, 0.2];
    let (a, b) = toy_pair(&c, 0);
    let (h, _, _) = infer(&params, &a, &b)?;
    Ok(ToyReport {
        trials,
        near_ties,
        recovered,
        example_d: difference_matrix(&a, &b),
        example_a: a,
        example_b: b,
        example_h: h,
    })
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("({})", parts.join(", "))
}

impl fmt::Display for ToyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "recovered {}/{} ({} near-ties excluded of {} trials)",
            self.recovered,
            self.scored(),
            self.near_ties,
            self.trials
        )?;
        writeln!(f, "example with z = 0")?;
        writeln!(f, "  a = {}", fmt_vec(&self.example_a))?;
        writeln!(f, "  b = {}", fmt_vec(&self.example_b))?;
        writeln!(f, "  D(a, b) =")?;
        for r in 0..self.example_d.rows() {
            writeln!(f, "    {}", fmt_vec(self.example_d.row(r)))?;
        }
        write!(f, "  h = {}", fmt_vec(&self.example_h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_are_shifted_identities() {
        let w = toy_weights();
        assert_eq!(w.weights()[0].get(1, 0), 1.0);
        assert_eq!(w.weights()[0].get(0, 0), 0.0);
        assert_eq!(w.weights()[0].sum(), 4.0);
        assert_eq!(w.weights()[1], Tensor2D::identity(5));
        assert_eq!(w.weights()[2].get(0, 1), 1.0);
        assert_eq!(w.weights()[2].get(4, 4), 0.0);
    }

    #[test]
    fn pairs_follow_the_shift() {
        let c = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(toy_pair(&c, -1).1, vec![2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(toy_pair(&c, 0).1, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(toy_pair(&c, 1).1, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn zero_shift_zeroes_the_middle_unit() {
        let c = [0.3, 0.7, 0.1, 0.9, 0.4, 0.2, 0.8];
        let (a, b) = toy_pair(&c, 0);
        let (h, winner, z) = infer(&toy_weights(), &a, &b).unwrap();
        assert_eq!(h[1], 0.0);
        assert!(h[0] > 0.0 && h[2] > 0.0);
        assert_eq!(winner, vec![0.0, 1.0, 0.0]);
        assert_eq!(z, 0.0);
        let d = difference_matrix(&a, &b);
        assert!((0..5).all(|i| d.get(i, i) == 0.0));
    }

    #[test]
    fn zero_patterns_match_the_shift() {
        let c = [0.3, 0.7, 0.1, 0.9, 0.4, 0.2, 0.8];
        let (a, b1) = toy_pair(&c, -1);
        let d1 = difference_matrix(&a, &b1);
        assert!((1..5).all(|i| d1.get(i, i - 1) == 0.0));
        let (_, b3) = toy_pair(&c, 1);
        let d3 = difference_matrix(&a, &b3);
        assert!((0..4).all(|i| d3.get(i, i + 1) == 0.0));
    }

    #[test]
    fn recovers_every_non_degenerate_trial() {
        let r = run_toy(1000, 1).unwrap();
        assert!(r.scored() >= 999);
        assert!(r.all_recovered(), "{r}");
        assert!(r.to_string().contains("D(a, b)"));
    }

    #[test]
    fn constant_sequence_is_a_tie() {
        let c = [0.5; 7];
        let (a, b) = toy_pair(&c, 1);
        let (h, _, _) = infer(&toy_weights(), &a, &b).unwrap();
        assert!(margin(&h) < NEAR_TIE);
    }
}
