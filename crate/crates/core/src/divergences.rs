//! Squared Hellinger distances, Fisher-information distances and the
//! Bhattacharyya product rule.
//!
//! Throughout, `H²(p, q) = ∫(√p − √q)²`, so `H² = 2(1 − BC)` with `BC` the
//! Bhattacharyya coefficient and `0 ≤ H² ≤ 2`.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::markov::two_state_bhattacharyya;
use crate::model::{check_param, path_rng, ModelSpec};
use crate::numeric::gauss_legendre_unit;
use crate::rng::RngStream;
use crate::types::{FisherMatrix, Normalization};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DivergenceMethod {
    ClosedForm,
    Tensorized,
    MonteCarlo,
    Quadrature,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DivergenceEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub method: DivergenceMethod,
}

impl DivergenceEstimate {
    fn exact(value: f64, method: DivergenceMethod) -> Self {
        DivergenceEstimate {
            value,
            std_error: 0.0,
            n_samples: 0,
            method,
        }
    }
}

static CLAMP_EVENTS: AtomicUsize = AtomicUsize::new(0);

/// Number of Monte Carlo Hellinger estimates that had to be clamped into [0, 2].
pub fn clamp_events() -> usize {
    CLAMP_EVENTS.load(Ordering::Relaxed)
}

fn log_det_spd(a: &DMatrix<f64>) -> Option<f64> {
    let c = a.clone().cholesky()?;
    Some(2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Closed form between `N(μ₁, Σ₁)` and `N(μ₂, Σ₂)`.
pub fn hellinger_sq_gaussian(mu1: &[f64], cov1: &DMatrix<f64>, mu2: &[f64], cov2: &DMatrix<f64>) -> Result<DivergenceEstimate> {
    let d = mu1.len();
    for (r, c) in [(cov1.nrows(), cov1.ncols()), (cov2.nrows(), cov2.ncols())] {
        if r != d || c != d {
            return Err(Error::DimensionMismatch { expected: d, got: r.max(c) });
        }
    }
    if mu2.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: mu2.len() });
    }
    let avg = (cov1 + cov2) * 0.5;
    let ld_avg = log_det_spd(&avg).ok_or_else(|| Error::Degenerate("average covariance is singular".into()))?;
    let ld1 = log_det_spd(cov1).ok_or_else(|| Error::Degenerate("first covariance is not positive definite".into()))?;
    let ld2 = log_det_spd(cov2).ok_or_else(|| Error::Degenerate("second covariance is not positive definite".into()))?;
    let delta = DVector::from_iterator(d, mu1.iter().zip(mu2).map(|(a, b)| a - b));
    let chol = avg.cholesky().unwrap();
    let maha = delta.dot(&chol.solve(&delta));
    let log_bc = 0.25 * (ld1 + ld2) - 0.5 * ld_avg - maha / 8.0;
    let value = (2.0 * (1.0 - log_bc.exp())).clamp(0.0, 2.0);
    Ok(DivergenceEstimate::exact(value, DivergenceMethod::ClosedForm))
}

/// Path-law distance between two-state chains with the same uniform initial
/// law: `2(1 − BC₁^{T−1})` with `BC₁` the one-step coefficient.
pub fn hellinger_sq_two_state(theta0: f64, theta1: f64, horizon: usize) -> Result<DivergenceEstimate> {
    for t in [theta0, theta1] {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::invalid(format!("theta {t} outside (0, 1)")));
        }
    }
    if horizon < 2 {
        return Err(Error::invalid("horizon must be at least 2"));
    }
    let bc = two_state_bhattacharyya(theta0, theta1, horizon);
    Ok(DivergenceEstimate::exact(2.0 * (1.0 - bc), DivergenceMethod::Tensorized))
}

/// Bhattacharyya-identity estimator with paths drawn from `p_{θ₀}`.
pub fn hellinger_sq_mc(model: &dyn ModelSpec, theta0: &[f64], theta1: &[f64], n: usize, stream: RngStream) -> Result<DivergenceEstimate> {
    check_param(model, theta0)?;
    check_param(model, theta1)?;
    if n < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    let ratios: Vec<std::result::Result<f64, usize>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let z = model.sample(theta0, &mut path_rng(stream, i));
            let l0 = model.loglik(theta0, &z);
            let l1 = model.loglik(theta1, &z);
            let r = (0.5 * (l1 - l0)).exp();
            if l0.is_finite() && !l1.is_nan() && r.is_finite() {
                Ok(r)
            } else {
                Err(i as usize)
            }
        })
        .collect();
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for r in ratios {
        let r = r.map_err(|index| Error::NonFiniteLoglik { index })?;
        sum += r;
        sum2 += r * r;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sum2 / nf - mean * mean) * nf / (nf - 1.0)).max(0.0);
    let raw = 2.0 * (1.0 - mean);
    let value = raw.clamp(0.0, 2.0);
    if value != raw {
        CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
    }
    Ok(DivergenceEstimate {
        value,
        std_error: 2.0 * (var / nf).sqrt(),
        n_samples: n,
        method: DivergenceMethod::MonteCarlo,
    })
}

/// Closed form when the family has one, else Monte Carlo.
pub fn hellinger_sq(model: &dyn ModelSpec, theta0: &[f64], theta1: &[f64], n_mc: usize, stream: RngStream) -> Result<DivergenceEstimate> {
    match model.hellinger_sq_exact(theta0, theta1) {
        Some(v) => Ok(DivergenceEstimate::exact(v, DivergenceMethod::ClosedForm)),
        None => hellinger_sq_mc(model, theta0, theta1, n_mc, stream),
    }
}

/// `∫₀¹ w(s) I(θ₀ + s(θ₁−θ₀)) ds` by Gauss–Legendre quadrature.
pub(crate) fn weighted_fisher_integral<F, W>(theta0: &[f64], theta1: &[f64], fisher_fn: F, weight: W, n_quad: usize) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<FisherMatrix>,
    W: Fn(f64) -> f64,
{
    if n_quad < 2 {
        return Err(Error::invalid("n_quad must be at least 2"));
    }
    if theta0.len() != theta1.len() {
        return Err(Error::DimensionMismatch { expected: theta0.len(), got: theta1.len() });
    }
    let p = theta0.len();
    let (s, w) = gauss_legendre_unit(n_quad);
    let mut acc = DMatrix::zeros(p, p);
    for (si, wi) in s.iter().zip(&w) {
        let th: Vec<f64> = theta0.iter().zip(theta1).map(|(a, b)| a + si * (b - a)).collect();
        let f = fisher_fn(&th)?;
        if f.dim() != p {
            return Err(Error::DimensionMismatch { expected: p, got: f.dim() });
        }
        acc += f.entries() * (wi * weight(*si));
    }
    Ok(acc)
}

/// `‖θ₁ − θ₀‖` in the segment-averaged Fisher metric.
pub fn fi_divergence<F>(theta0: &[f64], theta1: &[f64], fisher_fn: F, n_quad: usize) -> Result<DivergenceEstimate>
where
    F: Fn(&[f64]) -> Result<FisherMatrix>,
{
    let avg = weighted_fisher_integral(theta0, theta1, fisher_fn, |_| 1.0, n_quad)?;
    let avg = FisherMatrix::new((&avg + avg.transpose()) * 0.5, Normalization::PerTrajectory)?;
    let delta: Vec<f64> = theta1.iter().zip(theta0).map(|(a, b)| a - b).collect();
    Ok(DivergenceEstimate {
        value: avg.quad_form(&delta).max(0.0).sqrt(),
        std_error: 0.0,
        n_samples: n_quad,
        method: DivergenceMethod::Quadrature,
    })
}

/// `‖θ₁ − θ₀‖_{I_max}`.
pub fn max_fi_divergence(theta0: &[f64], theta1: &[f64], i_max: &FisherMatrix) -> Result<f64> {
    if theta0.len() != i_max.dim() || theta1.len() != i_max.dim() {
        return Err(Error::DimensionMismatch {
            expected: i_max.dim(),
            got: theta0.len().max(theta1.len()),
        });
    }
    let delta: Vec<f64> = theta1.iter().zip(theta0).map(|(a, b)| a - b).collect();
    Ok(i_max.quad_form(&delta).max(0.0).sqrt())
}

/// Squared Hellinger distance between `m`-fold products of laws at distance `h`.
pub fn hellinger_product_amplification(h: f64, m: u32) -> f64 {
    let bc = (1.0 - 0.5 * h * h).clamp(0.0, 1.0);
    2.0 * (1.0 - bc.powi(m as i32))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_hand_values() {
        let i2 = DMatrix::identity(2, 2);
        let v = hellinger_sq_gaussian(&[0.0, 0.0], &i2, &[1.0, 0.0], &i2).unwrap().value;
        assert!((v - 2.0 * (1.0 - (-0.125f64).exp())).abs() < 1e-14);
        assert!((v - 0.235_006_2).abs() < 1e-7);
        let a = DMatrix::from_element(1, 1, 1.0);
        let b = DMatrix::from_element(1, 1, 4.0);
        let v = hellinger_sq_gaussian(&[0.0], &a, &[0.0], &b).unwrap().value;
        assert!((v - 0.211_146).abs() < 1e-6);
        assert_eq!(hellinger_sq_gaussian(&[0.3], &a, &[0.3], &a).unwrap().value, 0.0);
    }

    #[test]
    fn singular_average_covariance_is_rejected() {
        let z = DMatrix::zeros(2, 2);
        assert!(hellinger_sq_gaussian(&[0.0, 0.0], &z, &[0.0, 0.0], &z).is_err());
    }

    #[test]
    fn two_state_single_transition() {
        let v = hellinger_sq_two_state(0.2, 0.8, 2).unwrap().value;
        assert!((v - 0.4).abs() < 1e-12);
        assert_eq!(hellinger_sq_two_state(0.3, 0.3, 9).unwrap().value, 0.0);
        assert!(hellinger_sq_two_state(0.0, 0.5, 3).is_err());
    }

    #[test]
    fn product_rule() {
        assert_eq!(hellinger_product_amplification(0.0, 17), 0.0);
        assert!((hellinger_product_amplification(0.4f64.sqrt(), 1) - 0.4).abs() < 1e-15);
        let delta: f64 = 0.1;
        let h = delta / (2.0f64 * 100.0).sqrt();
        assert!(hellinger_product_amplification(h, 100) <= delta * delta);
    }

    #[test]
    fn max_fi_hand_value() {
        let imax = FisherMatrix::scalar(1.0 / 0.09, Normalization::PerTrajectory).unwrap();
        let d = max_fi_divergence(&[0.3], &[0.5], &imax).unwrap();
        assert!((d - 0.666_666_666_666_7).abs() < 1e-12);
    }
}
