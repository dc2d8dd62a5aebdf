//! Sinusoidal generalized linear dynamics `z_{t+1} = sin(A z_t) + w_t`
//! with `w_t ~ N(0, σ² I)` and `z_0 = 0`.
//!
//! The parameter is `vec(A)` in column-major order. Stored paths are
//! `z_1, …, z_T`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{map_paths, ModelSpec};
use crate::numeric::mean_se;
use crate::rng::{RngStream, SimRng};
use crate::types::{FisherMatrix, Normalization, ParamDomain, Trajectory};

#[derive(Clone, Debug)]
pub struct SinGlmModel {
    d: usize,
    sigma: f64,
    horizon: usize,
    theta: Vec<f64>,
    domain: ParamDomain,
}

impl SinGlmModel {
    /// Model with parameter domain `{‖A‖_F ≤ radius}`.
    pub fn new(d: usize, sigma: f64, horizon: usize, theta: Vec<f64>, radius: f64) -> Result<Self> {
        if d == 0 || horizon < 2 || !(sigma > 0.0) {
            return Err(Error::invalid("need d ≥ 1, horizon ≥ 2 and sigma > 0"));
        }
        if theta.len() != d * d {
            return Err(Error::DimensionMismatch { expected: d * d, got: theta.len() });
        }
        let domain = ParamDomain::new_ball(vec![0.0; d * d], radius)?;
        if !domain.contains(&theta) {
            return Err(Error::invalid("true parameter lies outside the Frobenius ball"));
        }
        Ok(SinGlmModel {
            d,
            sigma,
            horizon,
            theta,
            domain,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.d
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `A z`, with `A` read column-major from `theta`.
    fn pre_activation(&self, theta: &[f64], z: &[f64]) -> Vec<f64> {
        let d = self.d;
        (0..d).map(|i| (0..d).map(|j| theta[j * d + i] * z[j]).sum()).collect()
    }

    fn log_norm(&self) -> f64 {
        -0.5 * self.d as f64 * (2.0 * std::f64::consts::PI * self.sigma * self.sigma).ln()
    }

    fn initial_loglik(&self, traj: &Trajectory) -> f64 {
        let z = traj.state(0);
        self.log_norm() - z.iter().map(|v| v * v).sum::<f64>() / (2.0 * self.sigma * self.sigma)
    }

    /// Conditional information of the next state given the current one,
    /// `Σ_j cos²(a_jᵀz)/σ² · (z zᵀ)` on the row-`j` block.
    pub fn conditional_fisher(&self, theta: &[f64], z: &[f64]) -> DMatrix<f64> {
        let d = self.d;
        let s2 = self.sigma * self.sigma;
        let u = self.pre_activation(theta, z);
        let mut f = DMatrix::zeros(d * d, d * d);
        for j in 0..d {
            let w = u[j].cos().powi(2) / s2;
            for k in 0..d {
                for l in 0..d {
                    f[(k * d + j, l * d + j)] = w * z[k] * z[l];
                }
            }
        }
        f
    }

    /// `λ_max(I) ≤ T (d + σ²) / σ²`, valid at every parameter.
    pub fn lambda_max_bound(&self) -> f64 {
        self.horizon as f64 * (self.d as f64 + self.sigma * self.sigma) / (self.sigma * self.sigma)
    }
}

impl ModelSpec for SinGlmModel {
    fn model_id(&self) -> &str {
        "sin_glm"
    }

    fn param_dim(&self) -> usize {
        self.d * self.d
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn domain(&self) -> &ParamDomain {
        &self.domain
    }

    fn is_log_concave(&self) -> bool {
        false
    }

    fn true_param(&self) -> &[f64] {
        &self.theta
    }

    fn sample(&self, theta: &[f64], rng: &mut SimRng) -> Trajectory {
        let d = self.d;
        let mut values = Vec::with_capacity(d * self.horizon);
        for _ in 0..d {
            values.push(self.sigma * rng.sample::<f64, _>(StandardNormal));
        }
        for t in 1..self.horizon {
            let u = self.pre_activation(theta, &values[(t - 1) * d..t * d]);
            for ui in u {
                values.push(ui.sin() + self.sigma * rng.sample::<f64, _>(StandardNormal));
            }
        }
        Trajectory::continuous(d, values)
    }

    fn loglik(&self, theta: &[f64], traj: &Trajectory) -> f64 {
        self.loglik_score(theta, traj).0
    }

    fn score(&self, theta: &[f64], traj: &Trajectory) -> DVector<f64> {
        self.loglik_score(theta, traj).1
    }

    fn loglik_score(&self, theta: &[f64], traj: &Trajectory) -> (f64, DVector<f64>) {
        let d = self.d;
        let s2 = self.sigma * self.sigma;
        let mut l = self.initial_loglik(traj);
        let mut g = DVector::zeros(d * d);
        for t in 0..traj.len() - 1 {
            let z = traj.state(t);
            let next = traj.state(t + 1);
            let u = self.pre_activation(theta, z);
            let mut sq = 0.0;
            for j in 0..d {
                let r = next[j] - u[j].sin();
                sq += r * r;
                let c = r * u[j].cos() / s2;
                for k in 0..d {
                    g[k * d + j] += c * z[k];
                }
            }
            l += self.log_norm() - sq / (2.0 * s2);
        }
        (l, g)
    }

    fn hessian(&self, theta: &[f64], traj: &Trajectory) -> DMatrix<f64> {
        let d = self.d;
        let s2 = self.sigma * self.sigma;
        let mut h = DMatrix::zeros(d * d, d * d);
        for t in 0..traj.len() - 1 {
            let z = traj.state(t);
            let next = traj.state(t + 1);
            let u = self.pre_activation(theta, z);
            for j in 0..d {
                let (s, c) = u[j].sin_cos();
                let r = next[j] - s;
                let w = (-c * c - r * s) / s2;
                for k in 0..d {
                    for l in 0..d {
                        h[(k * d + j, l * d + j)] += w * z[k] * z[l];
                    }
                }
            }
        }
        h
    }

    fn fisher_upper_bound(&self) -> Option<FisherMatrix> {
        let p = self.d * self.d;
        FisherMatrix::new(DMatrix::identity(p, p) * self.lambda_max_bound(), Normalization::PerTrajectory).ok()
    }

    fn check_trajectory(&self, traj: &Trajectory) -> Result<()> {
        if traj.state_dim() != Some(self.d) || traj.len() != self.horizon {
            return Err(Error::invalid(format!("expected {} states of dimension {}", self.horizon, self.d)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnticoncentrationCheck {
    pub p_hat: f64,
    pub std_error: f64,
    pub bound: f64,
    /// `p_hat ≤ bound + 3·std_error`.
    pub holds: bool,
}

/// `P(|cos(σg + a)| ≤ t) ≤ (1 + 3√(π/2)/σ)(1 − 2 arccos(t)/π)` for `g ~ N(0,1)`.
pub fn cos_anticoncentration_bound(sigma: f64, t: f64) -> f64 {
    (1.0 + 3.0 * (std::f64::consts::PI / 2.0).sqrt() / sigma) * (1.0 - 2.0 * t.acos() / std::f64::consts::PI)
}

pub fn cos_anticoncentration_check(sigma: f64, a: f64, t: f64, n: usize, stream: RngStream) -> Result<AnticoncentrationCheck> {
    if !(t > 0.0 && t < 1.0) || !(sigma > 0.0) || n < 2 {
        return Err(Error::invalid("need t in (0,1), sigma > 0 and n ≥ 2"));
    }
    let chunk = 8192;
    let hits: Vec<u64> = {
        use rayon::prelude::*;
        (0..n.div_ceil(chunk))
            .into_par_iter()
            .map(|c| {
                let mut rng = stream.child(c as u64).rng();
                let mut k = 0u64;
                for _ in c * chunk..((c + 1) * chunk).min(n) {
                    let g: f64 = rng.sample(StandardNormal);
                    k += u64::from((sigma * g + a).cos().abs() <= t);
                }
                k
            })
            .collect()
    };
    let p_hat = hits.iter().sum::<u64>() as f64 / n as f64;
    let se = (p_hat * (1.0 - p_hat) / n as f64).sqrt();
    let bound = cos_anticoncentration_bound(sigma, t);
    Ok(AnticoncentrationCheck {
        p_hat,
        std_error: se,
        bound,
        holds: p_hat <= bound + 3.0 * se,
    })
}

/// `E[(sin⟨u₁,z⟩ − sin⟨u₂,z⟩)²]` for `z ~ N(0, σ² I)` and its ratio to
/// `σ² ‖u₁ − u₂‖²` (NaN when `u₁ = u₂`).
pub fn sin_identifiability_probe(u1: &[f64], u2: &[f64], sigma: f64, n: usize, stream: RngStream) -> Result<(f64, f64)> {
    if u1.len() != u2.len() {
        return Err(Error::DimensionMismatch { expected: u1.len(), got: u2.len() });
    }
    if !(sigma > 0.0) || n < 2 {
        return Err(Error::invalid("need sigma > 0 and n ≥ 2"));
    }
    let d = u1.len();
    let draws: Vec<f64> = {
        use rayon::prelude::*;
        (0..n as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream.child(i).rng();
                let (mut a, mut b) = (0.0, 0.0);
                for k in 0..d {
                    let zk = sigma * rng.sample::<f64, _>(StandardNormal);
                    a += u1[k] * zk;
                    b += u2[k] * zk;
                }
                (a.sin() - b.sin()).powi(2)
            })
            .collect()
    };
    let (mse, _) = mean_se(&draws);
    let dist2: f64 = u1.iter().zip(u2).map(|(a, b)| (a - b) * (a - b)).sum();
    let ratio = if dist2 > 0.0 { mse / (sigma * sigma * dist2) } else { f64::NAN };
    Ok((mse, ratio))
}

/// Monte Carlo `λ_max` of the path Fisher information with its bound.
pub fn sin_glm_lambda_max(model: &SinGlmModel, theta: &[f64], n: usize, stream: RngStream) -> Result<(f64, f64)> {
    let p = model.param_dim();
    let outer = map_paths(model, theta, n, stream, |z| {
        let s = model.score(theta, z);
        &s * s.transpose()
    });
    let mut acc = DMatrix::zeros(p, p);
    for o in outer {
        acc += o;
    }
    let f = FisherMatrix::new(acc / n as f64, Normalization::PerTrajectory)?;
    Ok((f.lambda_max(), model.lambda_max_bound()))
}
