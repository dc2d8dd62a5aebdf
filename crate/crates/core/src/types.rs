use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numeric::sym_eigen;

/// Finite parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("parameter vector must be non-empty"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("parameter entry {i} is not finite")));
        }
        Ok(ParamVector(values))
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Self::new(vec![v])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ParamDomain {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl ParamDomain {
    pub fn new_box(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::invalid("box bounds must be non-empty and of equal length"));
        }
        for (i, (a, b)) in lo.iter().zip(&hi).enumerate() {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::invalid(format!("box axis {i}: need lo < hi, got [{a}, {b}]")));
            }
        }
        Ok(ParamDomain::Box { lo, hi })
    }

    /// Same interval `[lo, hi]` on each of `p` axes.
    pub fn cube(lo: f64, hi: f64, p: usize) -> Result<Self> {
        Self::new_box(vec![lo; p], vec![hi; p])
    }

    pub fn new_ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() || !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid("ball needs a non-empty center and radius > 0"));
        }
        Ok(ParamDomain::Ball { center, radius })
    }

    pub fn dim(&self) -> usize {
        match self {
            ParamDomain::Box { lo, .. } => lo.len(),
            ParamDomain::Ball { center, .. } => center.len(),
        }
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        const TOL: f64 = 1e-12;
        if theta.len() != self.dim() {
            return false;
        }
        match self {
            ParamDomain::Box { lo, hi } => theta
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(x, (a, b))| *x >= a - TOL && *x <= b + TOL),
            ParamDomain::Ball { center, radius } => dist(theta, center) <= radius * (1.0 + TOL),
        }
    }

    pub fn project(&self, theta: &[f64]) -> Vec<f64> {
        match self {
            ParamDomain::Box { lo, hi } => theta
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(x, (a, b))| x.clamp(*a, *b))
                .collect(),
            ParamDomain::Ball { center, radius } => {
                let r = dist(theta, center);
                if r <= *radius {
                    theta.to_vec()
                } else {
                    theta
                        .iter()
                        .zip(center)
                        .map(|(x, c)| c + (x - c) * radius / r)
                        .collect()
                }
            }
        }
    }

    pub fn center(&self) -> Vec<f64> {
        match self {
            ParamDomain::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect(),
            ParamDomain::Ball { center, .. } => center.clone(),
        }
    }

    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            ParamDomain::Box { lo, hi } => (lo.clone(), hi.clone()),
            ParamDomain::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
        }
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            ParamDomain::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(a, b)| a + (b - a) * rng.random::<f64>())
                .collect(),
            ParamDomain::Ball { center, radius } => {
                let p = center.len();
                let g: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
                let n = g.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                let r = radius * rng.random::<f64>().powf(1.0 / p as f64);
                g.iter().zip(center).map(|(x, c)| c + r * x / n).collect()
            }
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// State sequence of one realization.
///
/// Discrete states keep their 1-based labels. Continuous states are stored
/// row-major, one `dim`-vector per time step.
#[derive(Clone, Debug, PartialEq)]
pub enum States {
    Discrete(Vec<u32>),
    Continuous { dim: usize, values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    states: States,
}

impl Trajectory {
    pub fn discrete(states: Vec<u32>) -> Self {
        Trajectory {
            states: States::Discrete(states),
        }
    }

    pub fn continuous(dim: usize, values: Vec<f64>) -> Self {
        assert!(dim > 0 && values.len().is_multiple_of(dim), "state buffer not a multiple of dim");
        Trajectory {
            states: States::Continuous { dim, values },
        }
    }

    pub fn states(&self) -> &States {
        &self.states
    }

    pub fn len(&self) -> usize {
        match &self.states {
            States::Discrete(v) => v.len(),
            States::Continuous { dim, values } => values.len() / dim,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tokens(&self) -> Option<&[u32]> {
        match &self.states {
            States::Discrete(v) => Some(v),
            States::Continuous { .. } => None,
        }
    }

    pub fn state_dim(&self) -> Option<usize> {
        match &self.states {
            States::Discrete(_) => None,
            States::Continuous { dim, .. } => Some(*dim),
        }
    }

    /// Continuous state at step `t` (0-based).
    pub fn state(&self, t: usize) -> &[f64] {
        match &self.states {
            States::Continuous { dim, values } => &values[t * dim..(t + 1) * dim],
            States::Discrete(_) => panic!("state() called on a discrete trajectory"),
        }
    }

    /// First `n` time steps.
    pub fn truncated(&self, n: usize) -> Trajectory {
        let n = n.min(self.len());
        match &self.states {
            States::Discrete(v) => Trajectory::discrete(v[..n].to_vec()),
            States::Continuous { dim, values } => Trajectory::continuous(*dim, values[..n * dim].to_vec()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    pub model_id: String,
    pub horizon: usize,
    pub master_seed: u64,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryDataset {
    pub fn new(model_id: impl Into<String>, horizon: usize, master_seed: u64, trajectories: Vec<Trajectory>) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::invalid("dataset must contain at least one trajectory"));
        }
        let len = trajectories[0].len();
        if let Some(i) = trajectories.iter().position(|t| t.len() != len) {
            return Err(Error::invalid(format!(
                "trajectory {i} has length {} but trajectory 0 has {len}",
                trajectories[i].len()
            )));
        }
        Ok(TrajectoryDataset {
            model_id: model_id.into(),
            horizon,
            master_seed,
            trajectories,
        })
    }

    pub fn m(&self) -> usize {
        self.trajectories.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    /// Fisher information of a whole trajectory.
    PerTrajectory,
    /// Per-step information, the trajectory matrix divided by the horizon.
    PerStep,
}

/// Symmetric, numerically PSD information matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherMatrix {
    entries: DMatrix<f64>,
    normalization: Normalization,
}

impl FisherMatrix {
    pub fn new(entries: DMatrix<f64>, normalization: Normalization) -> Result<Self> {
        let p = entries.nrows();
        if p == 0 || entries.ncols() != p {
            return Err(Error::invalid("Fisher matrix must be square and non-empty"));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("Fisher matrix has non-finite entries"));
        }
        let scale = entries.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        let asym = (&entries - entries.transpose()).iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if asym > 1e-12 * scale {
            return Err(Error::invalid(format!("Fisher matrix not symmetric (max asymmetry {asym:.3e})")));
        }
        let entries = (&entries + entries.transpose()) * 0.5;
        let (vals, _) = sym_eigen(&entries);
        let lmax = vals.last().copied().unwrap_or(0.0).max(0.0);
        if vals[0] < -1e-10 * lmax.max(f64::MIN_POSITIVE) {
            return Err(Error::invalid(format!(
                "Fisher matrix not PSD (eigenvalue {:.3e}, max {lmax:.3e})",
                vals[0]
            )));
        }
        Ok(FisherMatrix { entries, normalization })
    }

    pub fn scalar(value: f64, normalization: Normalization) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, value), normalization)
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    /// Per-step version of a trajectory matrix.
    pub fn per_step(&self, horizon: usize) -> FisherMatrix {
        match self.normalization {
            Normalization::PerStep => self.clone(),
            Normalization::PerTrajectory => FisherMatrix {
                entries: &self.entries / horizon as f64,
                normalization: Normalization::PerStep,
            },
        }
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        sym_eigen(&self.entries).0
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eigenvalues().last().unwrap()
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// `vᵀ I v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        assert_eq!(v.len(), self.dim());
        let v = DVector::from_column_slice(v);
        (v.transpose() * &self.entries * &v)[(0, 0)]
    }

    /// `I^{-1/2}`; fails when the matrix is singular.
    pub fn inv_sqrt(&self) -> Result<DMatrix<f64>> {
        crate::numeric::inv_sqrt_psd(&self.entries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;

    #[test]
    fn ball_projection_lands_on_sphere() {
        let d = ParamDomain::new_ball(vec![0.0, 0.0], 1.0).unwrap();
        let p = d.project(&[3.0, 4.0]);
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
        assert!(d.contains(&p));
    }

    #[test]
    fn uniform_ball_draws_stay_inside() {
        let d = ParamDomain::new_ball(vec![1.0, -1.0, 0.5], 0.3).unwrap();
        let mut rng = derive_stream(3, 0).rng();
        for _ in 0..1000 {
            assert!(d.contains(&d.sample_uniform(&mut rng)));
        }
    }

    #[test]
    fn fisher_rejects_asymmetric_and_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(FisherMatrix::new(a, Normalization::PerTrajectory).is_err());
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(FisherMatrix::new(b, Normalization::PerTrajectory).is_err());
    }

    #[test]
    fn non_finite_parameters_rejected() {
        assert!(ParamVector::new(vec![0.1, f64::NAN]).is_err());
        assert!(ParamVector::new(vec![]).is_err());
    }
}
