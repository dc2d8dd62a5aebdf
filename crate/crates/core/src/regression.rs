//! Dependent regression `z_{t+1} = M(z_t) θ + w_t` with product noise.
//!
//! States live in ℝ^d with `z_0 = 0`, so `z_1 = w_0` and the stored path is
//! `z_1, …, z_T`. Densities are with respect to Lebesgue measure.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{map_paths, ModelSpec};
use crate::noise::NoiseFamily;
use crate::numeric::op_norm;
use crate::rng::{RngStream, SimRng};
use crate::types::{FisherMatrix, Normalization, ParamDomain, Trajectory, TrajectoryDataset};

type CustomMap = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// Feature map `M: ℝ^d → ℝ^{d×p}`.
#[derive(Clone)]
pub enum FeatureMap {
    /// `M(z) = zᵀ ⊗ I_d`, so `M(z) vec(A) = A z`.
    Linear,
    /// `M(z) = sin(z)ᵀ ⊗ I_d`, so `M(z) vec(A) = A sin(z)`; bounded features.
    BoundedSin,
    Custom { p: usize, map: CustomMap },
}

impl fmt::Debug for FeatureMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureMap::Linear => write!(f, "Linear"),
            FeatureMap::BoundedSin => write!(f, "BoundedSin"),
            FeatureMap::Custom { p, .. } => write!(f, "Custom(p={p})"),
        }
    }
}

impl FeatureMap {
    pub fn param_dim(&self, d: usize) -> usize {
        match self {
            FeatureMap::Linear | FeatureMap::BoundedSin => d * d,
            FeatureMap::Custom { p, .. } => *p,
        }
    }

    fn kron_features(&self, z: &[f64]) -> Option<Vec<f64>> {
        match self {
            FeatureMap::Linear => Some(z.to_vec()),
            FeatureMap::BoundedSin => Some(z.iter().map(|v| v.sin()).collect()),
            FeatureMap::Custom { .. } => None,
        }
    }

    /// The dense `d×p` matrix `M(z)`.
    pub fn matrix(&self, z: &[f64]) -> DMatrix<f64> {
        let d = z.len();
        match self.kron_features(z) {
            Some(g) => {
                let mut m = DMatrix::zeros(d, d * d);
                for (j, gj) in g.iter().enumerate() {
                    for i in 0..d {
                        m[(i, j * d + i)] = *gj;
                    }
                }
                m
            }
            None => match self {
                FeatureMap::Custom { map, .. } => map(z),
                _ => unreachable!(),
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct RegressionModel {
    d: usize,
    horizon: usize,
    theta: Vec<f64>,
    noise: NoiseFamily,
    map: FeatureMap,
    domain: ParamDomain,
}

impl RegressionModel {
    /// Model with parameter domain `{‖θ‖ ≤ radius}`.
    pub fn new(d: usize, horizon: usize, theta: Vec<f64>, noise: NoiseFamily, map: FeatureMap, radius: f64) -> Result<Self> {
        if d == 0 || horizon < 2 {
            return Err(Error::invalid("need d ≥ 1 and horizon ≥ 2"));
        }
        let p = map.param_dim(d);
        if theta.len() != p {
            return Err(Error::DimensionMismatch { expected: p, got: theta.len() });
        }
        let domain = ParamDomain::new_ball(vec![0.0; p], radius)?;
        if !domain.contains(&theta) {
            return Err(Error::invalid("true parameter lies outside the parameter ball"));
        }
        if let FeatureMap::Custom { map: f, .. } = &map {
            let m = f(&vec![0.0; d]);
            if m.nrows() != d || m.ncols() != p {
                return Err(Error::invalid(format!("custom feature map returns {}×{}, expected {d}×{p}", m.nrows(), m.ncols())));
            }
        }
        Ok(RegressionModel {
            d,
            horizon,
            theta,
            noise,
            map,
            domain,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.d
    }

    pub fn noise(&self) -> &NoiseFamily {
        &self.noise
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.map
    }

    fn mean_next(&self, theta: &[f64], z: &[f64]) -> Vec<f64> {
        let d = self.d;
        match self.map.kron_features(z) {
            Some(g) => (0..d).map(|i| (0..d).map(|j| theta[j * d + i] * g[j]).sum()).collect(),
            None => {
                let m = self.map.matrix(z);
                (m * DVector::from_column_slice(theta)).iter().copied().collect()
            }
        }
    }

    fn steps(&self, traj: &Trajectory) -> usize {
        traj.len() - 1
    }

    fn initial_loglik(&self, traj: &Trajectory) -> f64 {
        traj.state(0).iter().map(|w| self.noise.log_density(*w)).sum()
    }

    /// Uses the Kronecker structure when available.
    fn accumulate<F: FnMut(&[f64], &[f64], &DMatrix<f64>)>(&self, theta: &[f64], traj: &Trajectory, mut f: F) {
        for t in 0..self.steps(traj) {
            let z = traj.state(t);
            let next = traj.state(t + 1);
            let mean = self.mean_next(theta, z);
            let resid: Vec<f64> = next.iter().zip(&mean).map(|(a, b)| a - b).collect();
            let m = match self.map {
                FeatureMap::Custom { .. } => self.map.matrix(z),
                _ => DMatrix::zeros(0, 0),
            };
            f(z, &resid, &m);
        }
    }

    /// Closed-form Fisher information for the linear map:
    /// `(1/σ_φ²) Σ_t E[z_t z_tᵀ] ⊗ I_d` with `E[z_t z_tᵀ] = v Σ_{s<t} A^s A^{sᵀ}`.
    fn linear_fisher(&self, theta: &[f64]) -> FisherMatrix {
        let d = self.d;
        let a = DMatrix::from_column_slice(d, d, theta);
        let v = self.noise.variance();
        let mut cov = DMatrix::identity(d, d) * v;
        let mut acc = DMatrix::zeros(d, d);
        for _ in 1..self.horizon {
            acc += &cov;
            cov = &a * &cov * a.transpose() + DMatrix::identity(d, d) * v;
        }
        let info = acc.kronecker(&DMatrix::identity(d, d)) / self.noise.sigma_phi_sq();
        FisherMatrix::new((&info + info.transpose()) * 0.5, Normalization::PerTrajectory).expect("Gram sum is PSD")
    }
}

impl ModelSpec for RegressionModel {
    fn model_id(&self) -> &str {
        "regression"
    }

    fn param_dim(&self) -> usize {
        self.theta.len()
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn domain(&self) -> &ParamDomain {
        &self.domain
    }

    fn is_log_concave(&self) -> bool {
        // convex φ makes every step concave in θ
        !matches!(self.noise.kind(), crate::noise::NoiseKind::BangBang { .. })
    }

    fn true_param(&self) -> &[f64] {
        &self.theta
    }

    fn sample(&self, theta: &[f64], rng: &mut SimRng) -> Trajectory {
        let d = self.d;
        let mut values = Vec::with_capacity(d * self.horizon);
        for _ in 0..d {
            values.push(self.noise.sample(rng));
        }
        for t in 1..self.horizon {
            let mean = self.mean_next(theta, &values[(t - 1) * d..t * d]);
            for mi in mean {
                values.push(mi + self.noise.sample(rng));
            }
        }
        Trajectory::continuous(d, values)
    }

    fn loglik(&self, theta: &[f64], traj: &Trajectory) -> f64 {
        let mut l = self.initial_loglik(traj);
        self.accumulate(theta, traj, |_, r, _| {
            l += r.iter().map(|w| self.noise.log_density(*w)).sum::<f64>();
        });
        l
    }

    fn score(&self, theta: &[f64], traj: &Trajectory) -> DVector<f64> {
        self.loglik_score(theta, traj).1
    }

    fn loglik_score(&self, theta: &[f64], traj: &Trajectory) -> (f64, DVector<f64>) {
        let d = self.d;
        let p = self.theta.len();
        let mut l = self.initial_loglik(traj);
        let mut g = DVector::zeros(p);
        self.accumulate(theta, traj, |z, r, m| {
            l += r.iter().map(|w| self.noise.log_density(*w)).sum::<f64>();
            let dphi: Vec<f64> = r.iter().map(|w| self.noise.dphi(*w)).collect();
            match self.map.kron_features(z) {
                Some(feat) => {
                    for (j, fj) in feat.iter().enumerate() {
                        for i in 0..d {
                            g[j * d + i] += dphi[i] * fj;
                        }
                    }
                }
                None => g += m.transpose() * DVector::from_vec(dphi),
            }
        });
        (l, g)
    }

    fn hessian(&self, theta: &[f64], traj: &Trajectory) -> DMatrix<f64> {
        let d = self.d;
        let p = self.theta.len();
        let mut h = DMatrix::zeros(p, p);
        self.accumulate(theta, traj, |z, r, m| {
            let dd: Vec<f64> = r.iter().map(|w| self.noise.ddphi(*w)).collect();
            match self.map.kron_features(z) {
                Some(feat) => {
                    for j in 0..d {
                        for l in 0..d {
                            let gg = feat[j] * feat[l];
                            for i in 0..d {
                                h[(j * d + i, l * d + i)] -= gg * dd[i];
                            }
                        }
                    }
                }
                None => {
                    let w = DMatrix::from_diagonal(&DVector::from_vec(dd));
                    h -= m.transpose() * w * m;
                }
            }
        });
        h
    }

    fn fisher_exact(&self, theta: &[f64]) -> Option<FisherMatrix> {
        match self.map {
            FeatureMap::Linear => Some(self.linear_fisher(theta)),
            _ => None,
        }
    }

    fn fisher_upper_bound(&self) -> Option<FisherMatrix> {
        match self.map {
            // |sin| ≤ 1 bounds each feature, so ‖M(z)‖² ≤ d.
            FeatureMap::BoundedSin => {
                let v = (self.horizon - 1) as f64 * self.d as f64 / self.noise.sigma_phi_sq();
                FisherMatrix::new(DMatrix::identity(self.theta.len(), self.theta.len()) * v, Normalization::PerTrajectory).ok()
            }
            _ => None,
        }
    }

    fn check_trajectory(&self, traj: &Trajectory) -> Result<()> {
        if traj.state_dim() != Some(self.d) || traj.len() != self.horizon {
            return Err(Error::invalid(format!("expected {} states of dimension {}", self.horizon, self.d)));
        }
        Ok(())
    }
}

/// Monte Carlo `I(θ) = (1/σ_φ²) Σ_t E[M(z_t)ᵀ M(z_t)]`.
pub fn fisher_regression(model: &RegressionModel, theta: &[f64], n: usize, stream: RngStream) -> Result<FisherMatrix> {
    if n < 2 {
        return Err(Error::invalid("need at least two paths"));
    }
    let p = model.param_dim();
    let parts = map_paths(model, theta, n, stream, |z| {
        let mut acc = DMatrix::zeros(p, p);
        for t in 0..z.len() - 1 {
            let m = model.map.matrix(z.state(t));
            acc += m.transpose() * m;
        }
        acc
    });
    let mut sum = DMatrix::zeros(p, p);
    for a in parts {
        sum += a;
    }
    let info = sum / (n as f64 * model.noise.sigma_phi_sq());
    FisherMatrix::new((&info + info.transpose()) * 0.5, Normalization::PerTrajectory)
}

/// Path-averaged feature moments `M₁ = (avg E‖M(z_t)‖⁴)^{1/4}` and
/// `M₂ = (avg E‖M(z_t)‖⁸)^{1/8}` over the `T−1` regressors.
pub fn feature_moments(model: &RegressionModel, theta: &[f64], n: usize, stream: RngStream) -> (f64, f64) {
    let per_path = map_paths(model, theta, n, stream, |z| {
        let mut s4 = 0.0;
        let mut s8 = 0.0;
        for t in 0..z.len() - 1 {
            let nrm = op_norm(&model.map.matrix(z.state(t)));
            s4 += nrm.powi(4);
            s8 += nrm.powi(8);
        }
        (s4, s8)
    });
    let k = (n * (model.horizon - 1)) as f64;
    let (s4, s8) = per_path.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    ((s4 / k).powf(0.25), (s8 / k).powf(0.125))
}

/// Unconstrained least-squares estimate of `θ` over a dataset.
pub fn least_squares(model: &RegressionModel, data: &TrajectoryDataset) -> Result<Vec<f64>> {
    let p = model.param_dim();
    let mut gram = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for z in &data.trajectories {
        model.check_trajectory(z)?;
        for t in 0..z.len() - 1 {
            let m = model.map.matrix(z.state(t));
            gram += m.transpose() * &m;
            rhs += m.transpose() * DVector::from_column_slice(z.state(t + 1));
        }
    }
    let sol = gram
        .cholesky()
        .ok_or_else(|| Error::Degenerate("regressor Gram matrix is singular".into()))?
        .solve(&rhs);
    Ok(sol.iter().copied().collect())
}
