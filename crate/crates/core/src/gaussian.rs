//! `N(θ, Σ)` with known covariance and one draw per trajectory. Used as a
//! closed-form reference for the Hellinger estimators.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::divergences::hellinger_sq_gaussian;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::rng::SimRng;
use crate::types::{FisherMatrix, Normalization, ParamDomain, Trajectory};

#[derive(Clone, Debug)]
pub struct GaussianLocationModel {
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_norm: f64,
    mean: Vec<f64>,
    domain: ParamDomain,
}

impl GaussianLocationModel {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>, radius: f64) -> Result<Self> {
        let d = mean.len();
        if cov.shape() != (d, d) {
            return Err(Error::DimensionMismatch { expected: d, got: cov.nrows() });
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Degenerate("covariance is not positive definite".into()))?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let precision = chol.inverse();
        let domain = ParamDomain::new_ball(vec![0.0; d], radius)?;
        Ok(GaussianLocationModel {
            log_norm: -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det),
            chol: chol.l(),
            cov,
            precision,
            mean,
            domain,
        })
    }

    pub fn isotropic(mean: Vec<f64>, radius: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, DMatrix::identity(d, d), radius)
    }

    fn residual(&self, theta: &[f64], traj: &Trajectory) -> DVector<f64> {
        DVector::from_iterator(theta.len(), traj.state(0).iter().zip(theta).map(|(x, m)| x - m))
    }
}

impl ModelSpec for GaussianLocationModel {
    fn model_id(&self) -> &str {
        "gaussian"
    }

    fn param_dim(&self) -> usize {
        self.mean.len()
    }

    fn horizon(&self) -> usize {
        1
    }

    fn domain(&self) -> &ParamDomain {
        &self.domain
    }

    fn is_log_concave(&self) -> bool {
        true
    }

    fn true_param(&self) -> &[f64] {
        &self.mean
    }

    fn sample(&self, theta: &[f64], rng: &mut SimRng) -> Trajectory {
        let g = DVector::from_iterator(theta.len(), (0..theta.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let x = &self.chol * g;
        Trajectory::continuous(theta.len(), x.iter().zip(theta).map(|(a, b)| a + b).collect())
    }

    fn loglik(&self, theta: &[f64], traj: &Trajectory) -> f64 {
        let r = self.residual(theta, traj);
        self.log_norm - 0.5 * r.dot(&(&self.precision * &r))
    }

    fn score(&self, theta: &[f64], traj: &Trajectory) -> DVector<f64> {
        &self.precision * self.residual(theta, traj)
    }

    fn hessian(&self, _theta: &[f64], _traj: &Trajectory) -> DMatrix<f64> {
        -self.precision.clone()
    }

    fn fisher_exact(&self, _theta: &[f64]) -> Option<FisherMatrix> {
        FisherMatrix::new(self.precision.clone(), Normalization::PerTrajectory).ok()
    }

    fn fisher_upper_bound(&self) -> Option<FisherMatrix> {
        self.fisher_exact(&self.mean)
    }

    fn hellinger_sq_exact(&self, theta0: &[f64], theta1: &[f64]) -> Option<f64> {
        hellinger_sq_gaussian(theta0, &self.cov, theta1, &self.cov).ok().map(|e| e.value)
    }

    fn check_trajectory(&self, traj: &Trajectory) -> Result<()> {
        if traj.state_dim() != Some(self.mean.len()) || traj.len() != 1 {
            return Err(Error::invalid("expected a single state of matching dimension"));
        }
        Ok(())
    }
}
