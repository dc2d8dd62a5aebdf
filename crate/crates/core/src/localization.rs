//! Local quadratic behaviour of the path-level Hellinger distance: whitened
//! score and Hessian moments along a segment, the radius predicates, the
//! averaged information `I₂` and the end-to-end report.
//!
//! Direction suprema are taken over whitened coordinate axes plus random
//! unit directions, so the `B₁`, `B₂` estimates are lower bounds on the true
//! suprema.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::divergences::{hellinger_sq, weighted_fisher_integral, DivergenceEstimate};
use crate::error::{Error, Result};
use crate::estimation::{mle_continuous, MleConfig};
use crate::model::{check_param, fisher_information, path_rng, ModelSpec};
use crate::numeric::{chebyshev_unit, op_norm_sym};
use crate::rng::{derive_stream, RngStream};
use crate::types::{FisherMatrix, Normalization, TrajectoryDataset};

const DIRECTION_STREAM: u64 = 0xD1;
const FISHER_STREAM: u64 = 0xF1;
const PATH_STREAM: u64 = 0x9A;
const CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct MomentConfig {
    pub n_dirs: usize,
    pub n_mc: usize,
    pub n_s: usize,
    pub n_fisher_mc: usize,
    /// Use Monte Carlo even when the family has closed-form moments.
    pub force_mc: bool,
}

impl Default for MomentConfig {
    fn default() -> Self {
        MomentConfig {
            n_dirs: 256,
            n_mc: 10_000,
            n_s: 17,
            n_fisher_mc: 10_000,
            force_mc: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointMoment {
    pub s: f64,
    pub value: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentEstimate {
    pub value: f64,
    pub std_error: f64,
    pub s_at_max: f64,
    pub per_point: Vec<PointMoment>,
}

impl MomentEstimate {
    fn from_points(per_point: Vec<PointMoment>) -> Self {
        let best = per_point
            .iter()
            .copied()
            .reduce(|a, b| if b.value > a.value { b } else { a })
            .expect("at least one grid point");
        MomentEstimate {
            value: best.value,
            std_error: best.std_error,
            s_at_max: best.s,
            per_point,
        }
    }
}

fn segment_point(theta0: &[f64], theta1: &[f64], s: f64) -> Vec<f64> {
    theta0.iter().zip(theta1).map(|(a, b)| a + s * (b - a)).collect()
}

fn segment_grid(theta0: &[f64], theta1: &[f64], n_s: usize) -> Vec<f64> {
    if theta0 == theta1 || n_s < 2 {
        vec![0.0]
    } else {
        chebyshev_unit(n_s)
    }
}

/// Unit directions: coordinate axes first, then `n_dirs` random ones. The
/// list for `n` directions is a prefix of the list for `n + 1`.
pub fn probe_directions(p: usize, n_dirs: usize, stream: RngStream) -> Vec<DVector<f64>> {
    let mut dirs: Vec<DVector<f64>> = (0..p).map(|i| DVector::from_fn(p, |j, _| f64::from(u8::from(i == j)))).collect();
    for k in 0..n_dirs as u64 {
        let mut rng = stream.child(k).rng();
        let v = DVector::<f64>::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
        let n = v.norm();
        if n > 0.0 {
            dirs.push(v / n);
        }
    }
    dirs
}

fn fisher_at(model: &dyn ModelSpec, theta: &[f64], n_mc: usize, stream: RngStream) -> Result<FisherMatrix> {
    fisher_information(model, theta, n_mc, stream.child(FISHER_STREAM))
}

/// Per-point `(B₁, B₂)` at `theta`, whitened by `I(θ)^{-1/2}`.
fn point_moments(model: &dyn ModelSpec, theta: &[f64], s: f64, cfg: &MomentConfig, stream: RngStream) -> Result<(PointMoment, PointMoment)> {
    if !cfg.force_mc {
        if let Some((m4, m2h)) = model.scalar_whitened_moments(theta) {
            return Ok((
                PointMoment { s, value: m4.powf(0.25), std_error: 0.0 },
                PointMoment { s, value: m2h.sqrt(), std_error: 0.0 },
            ));
        }
    }
    if cfg.n_mc < 2 {
        return Err(Error::invalid("n_mc must be at least 2"));
    }
    let p = model.param_dim();
    let fisher = fisher_at(model, theta, cfg.n_fisher_mc, stream)?;
    let w = fisher
        .inv_sqrt()
        .map_err(|_| Error::Degenerate(format!("Fisher information is singular at s = {s}")))?;
    let dirs = probe_directions(p, cfg.n_dirs, stream.child(DIRECTION_STREAM));
    let u = DMatrix::from_columns(&dirs.iter().map(|v| &w * v).collect::<Vec<_>>());
    let nd = u.ncols();
    let paths = stream.child(PATH_STREAM);
    let n = cfg.n_mc;
    // per direction: Σa⁴, Σa⁸, Σb², Σb⁴
    let parts: Vec<Vec<[f64; 4]>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![[0.0; 4]; nd];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let z = model.sample(theta, &mut path_rng(paths, i as u64));
                let a = u.transpose() * model.score(theta, &z);
                let hu = model.hessian(theta, &z) * &u;
                for j in 0..nd {
                    let a4 = a[j].powi(4);
                    let b2 = u.column(j).dot(&hu.column(j)).powi(2);
                    let e = &mut acc[j];
                    e[0] += a4;
                    e[1] += a4 * a4;
                    e[2] += b2;
                    e[3] += b2 * b2;
                }
            }
            acc
        })
        .collect();
    let mut tot = vec![[0.0; 4]; nd];
    for part in &parts {
        for (t, q) in tot.iter_mut().zip(part) {
            for k in 0..4 {
                t[k] += q[k];
            }
        }
    }
    let nf = n as f64;
    let mean_se = |s1: f64, s2: f64| {
        let m = s1 / nf;
        (m, ((s2 / nf - m * m).max(0.0) / (nf - 1.0)).sqrt())
    };
    let mut b1 = PointMoment { s, value: 0.0, std_error: 0.0 };
    let mut b2 = b1;
    for t in &tot {
        let (m4, se4) = mean_se(t[0], t[1]);
        let v1 = m4.powf(0.25);
        if v1 > b1.value {
            b1.value = v1;
            b1.std_error = if m4 > 0.0 { se4 / (4.0 * m4.powf(0.75)) } else { 0.0 };
        }
        let (mb, seb) = mean_se(t[2], t[3]);
        let v2 = mb.sqrt();
        if v2 > b2.value {
            b2.value = v2;
            b2.std_error = if mb > 0.0 { seb / (2.0 * v2) } else { 0.0 };
        }
    }
    Ok((b1, b2))
}

/// Segment suprema of the whitened score `L⁴` norm and Hessian `L²` norm.
pub fn estimate_moments(model: &dyn ModelSpec, theta0: &[f64], theta1: &[f64], cfg: &MomentConfig, stream: RngStream) -> Result<(MomentEstimate, MomentEstimate)> {
    check_param(model, theta0)?;
    check_param(model, theta1)?;
    let grid = segment_grid(theta0, theta1, cfg.n_s);
    let points: Vec<(PointMoment, PointMoment)> = grid
        .iter()
        .enumerate()
        .map(|(k, &s)| point_moments(model, &segment_point(theta0, theta1, s), s, cfg, stream.child(k as u64)))
        .collect::<Result<_>>()?;
    let (p1, p2): (Vec<_>, Vec<_>) = points.into_iter().unzip();
    Ok((MomentEstimate::from_points(p1), MomentEstimate::from_points(p2)))
}

pub fn estimate_b1(model: &dyn ModelSpec, theta0: &[f64], theta1: &[f64], cfg: &MomentConfig, stream: RngStream) -> Result<MomentEstimate> {
    Ok(estimate_moments(model, theta0, theta1, cfg, stream)?.0)
}

pub fn estimate_b2(model: &dyn ModelSpec, theta0: &[f64], theta1: &[f64], cfg: &MomentConfig, stream: RngStream) -> Result<MomentEstimate> {
    Ok(estimate_moments(model, theta0, theta1, cfg, stream)?.1)
}

/// `(1/(16√2))·min{1/B₁², 1/B₂}`, a zero moment counting as an infinite reciprocal.
pub fn radius_threshold(b1: f64, b2: f64) -> f64 {
    let r1 = if b1 > 0.0 { 1.0 / (b1 * b1) } else { f64::INFINITY };
    let r2 = if b2 > 0.0 { 1.0 / b2 } else { f64::INFINITY };
    r1.min(r2) / (16.0 * 2f64.sqrt())
}

/// `h_sup` is a Hellinger distance (not squared).
pub fn check_radius(h_sup: f64, b1: f64, b2: f64) -> bool {
    h_sup <= radius_threshold(b1, b2)
}

/// `I₂ = 2∫₀¹(1 − s) I(θ(s)) ds`.
pub fn i2_matrix<F>(theta0: &[f64], theta1: &[f64], fisher_fn: F, n_quad: usize) -> Result<FisherMatrix>
where
    F: Fn(&[f64]) -> Result<FisherMatrix>,
{
    let m = weighted_fisher_integral(theta0, theta1, fisher_fn, |s| 2.0 * (1.0 - s), n_quad)?;
    FisherMatrix::new((&m + m.transpose()) * 0.5, Normalization::PerTrajectory)
}

/// Closed-form information if the family has it, else Monte Carlo with a
/// fixed stream so nearby parameters share random numbers.
pub fn model_fisher_fn<'a>(model: &'a dyn ModelSpec, n_mc: usize, stream: RngStream) -> impl Fn(&[f64]) -> Result<FisherMatrix> + 'a {
    move |th: &[f64]| fisher_at(model, th, n_mc, stream)
}

/// `sup_s ‖I(θ*)^{-1/2} I(θ(s)) I(θ*)^{-1/2} − I‖_op` over `n_s` points and
/// whether it is at most ½.
pub fn check_fi_radius<F>(theta_star: &[f64], theta_hat: &[f64], fisher_fn: F, n_s: usize) -> Result<(f64, bool)>
where
    F: Fn(&[f64]) -> Result<FisherMatrix>,
{
    let w = fisher_fn(theta_star)?
        .inv_sqrt()
        .map_err(|_| Error::Degenerate("Fisher information at the true parameter is singular".into()))?;
    let p = theta_star.len();
    let mut sup = 0.0f64;
    for s in segment_grid(theta_star, theta_hat, n_s) {
        let f = fisher_fn(&segment_point(theta_star, theta_hat, s))?;
        let dev = &w * f.entries() * &w - DMatrix::identity(p, p);
        sup = sup.max(op_norm_sym(&((&dev + dev.transpose()) * 0.5)));
    }
    Ok((sup, sup <= 0.5))
}

/// Largest `H(θ₀, θ(s))` over the segment grid, reported as `H²`.
fn hellinger_sup(model: &dyn ModelSpec, theta0: &[f64], theta1: &[f64], n_s: usize, n_mc: usize, stream: RngStream) -> Result<DivergenceEstimate> {
    let mut best: Option<DivergenceEstimate> = None;
    for (k, s) in segment_grid(theta0, theta1, n_s).into_iter().enumerate() {
        let th = segment_point(theta0, theta1, s);
        let h = hellinger_sq(model, theta0, &th, n_mc, stream.child(k as u64))?;
        if best.is_none_or(|b| h.value > b.value) {
            best = Some(h);
        }
    }
    Ok(best.expect("non-empty grid"))
}

#[derive(Clone, Debug)]
pub struct LocalQuadratic {
    pub h_sq: DivergenceEstimate,
    pub i2: FisherMatrix,
    pub i2_norm_sq: f64,
    pub ratio: f64,
    pub radius_ok: bool,
    /// `ratio ∈ [3/16, 5/16]`.
    pub in_band: bool,
    /// `in_band` whenever the radius predicate holds.
    pub within_bounds: bool,
}

pub fn verify_local_quadratic(model: &dyn ModelSpec, theta0: &[f64], theta1: &[f64], n_mc: usize, stream: RngStream) -> Result<LocalQuadratic> {
    check_param(model, theta0)?;
    check_param(model, theta1)?;
    if theta0 == theta1 {
        return Err(Error::invalid("theta0 and theta1 coincide"));
    }
    let h_sq = hellinger_sq(model, theta0, theta1, n_mc, stream.child(1))?;
    let fisher_fn = model_fisher_fn(model, n_mc, stream.child(2));
    let i2 = i2_matrix(theta0, theta1, &fisher_fn, 64)?;
    let delta: Vec<f64> = theta1.iter().zip(theta0).map(|(a, b)| a - b).collect();
    let i2_norm_sq = i2.quad_form(&delta);
    let ratio = h_sq.value / i2_norm_sq;
    let cfg = MomentConfig {
        n_mc,
        n_fisher_mc: n_mc,
        ..MomentConfig::default()
    };
    let (b1, b2) = estimate_moments(model, theta0, theta1, &cfg, stream.child(3))?;
    let sup = hellinger_sup(model, theta0, theta1, cfg.n_s, n_mc, stream.child(4))?;
    let radius_ok = check_radius(sup.value.sqrt(), b1.value, b2.value);
    let in_band = (3.0 / 16.0..=5.0 / 16.0).contains(&ratio);
    Ok(LocalQuadratic {
        h_sq,
        i2,
        i2_norm_sq,
        ratio,
        radius_ok,
        in_band,
        within_bounds: !radius_ok || in_band,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationConfig {
    pub moments: MomentConfig,
    pub mle: MleConfig,
    pub n_s: usize,
    pub n_quad: usize,
    pub n_hellinger_mc: usize,
    pub seed: u64,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        LocalizationConfig {
            moments: MomentConfig::default(),
            mle: MleConfig::default(),
            n_s: 17,
            n_quad: 64,
            n_hellinger_mc: 100_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LocalizationReport {
    pub model_id: String,
    pub theta_star: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub b1: MomentEstimate,
    pub b2: MomentEstimate,
    /// Largest `H²(θ*, θ)` along the segment to `θ̂`.
    pub hellinger_sup: DivergenceEstimate,
    pub radius_threshold: f64,
    pub radius_ok: bool,
    pub fi_sup_dev: f64,
    pub fi_radius_ok: bool,
    pub i2: FisherMatrix,
    pub h_sq: DivergenceEstimate,
    /// `H² / ‖Δ‖²_{I₂}`; `None` when `Δ = 0`.
    pub ratio: Option<f64>,
    pub fisher_star: FisherMatrix,
    /// `‖Δ‖²_{I(θ*)}`.
    pub fi_norm_sq: f64,
    /// `(3/32)‖Δ‖² ≤ H² ≤ (15/32)‖Δ‖²` in `I(θ*)`, checked only inside the regime.
    pub sandwich: Option<bool>,
}

impl LocalizationReport {
    pub fn in_regime(&self) -> bool {
        self.radius_ok && self.fi_radius_ok
    }

    /// Flat `key = value` block.
    pub fn render(&self) -> String {
        let vec = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("model_id", self.model_id.clone());
        kv("theta_star", vec(&self.theta_star));
        kv("theta_hat", vec(&self.theta_hat));
        kv("b1", format!("{}", self.b1.value));
        kv("b1_se", format!("{}", self.b1.std_error));
        kv("b2", format!("{}", self.b2.value));
        kv("b2_se", format!("{}", self.b2.std_error));
        kv("hellinger_sq_sup", format!("{}", self.hellinger_sup.value));
        kv("hellinger_sq_sup_se", format!("{}", self.hellinger_sup.std_error));
        kv("radius_threshold", format!("{}", self.radius_threshold));
        kv("radius_ok", format!("{}", self.radius_ok));
        kv("fi_sup_dev", format!("{}", self.fi_sup_dev));
        kv("fi_radius_ok", format!("{}", self.fi_radius_ok));
        kv("i2", vec(self.i2.entries().as_slice()));
        kv("hellinger_sq", format!("{}", self.h_sq.value));
        kv("hellinger_sq_se", format!("{}", self.h_sq.std_error));
        kv("ratio", self.ratio.map_or("none".into(), |r| format!("{r}")));
        kv("fi_norm_sq", format!("{}", self.fi_norm_sq));
        kv(
            "regime",
            if self.in_regime() { "localized".into() } else { "outside localization regime".into() },
        );
        kv("sandwich", self.sandwich.map_or("not checked".into(), |b| format!("{b}")));
        kv("note", "moment suprema use sampled directions and are lower bounds".into());
        out
    }
}

/// Report for a given estimate `θ̂`.
pub fn localization_report(model: &dyn ModelSpec, theta_star: &[f64], theta_hat: &[f64], cfg: &LocalizationConfig) -> Result<LocalizationReport> {
    check_param(model, theta_star)?;
    check_param(model, theta_hat)?;
    let root = derive_stream(cfg.seed, 0x10CA);
    let fisher_fn = model_fisher_fn(model, cfg.moments.n_fisher_mc, root.child(0));
    let (b1, b2) = estimate_moments(model, theta_star, theta_hat, &cfg.moments, root.child(1))?;
    let sup = hellinger_sup(model, theta_star, theta_hat, cfg.n_s, cfg.n_hellinger_mc, root.child(2))?;
    let threshold = radius_threshold(b1.value, b2.value);
    let radius_ok = sup.value.sqrt() <= threshold;
    let (fi_sup_dev, fi_radius_ok) = check_fi_radius(theta_star, theta_hat, &fisher_fn, cfg.n_s)?;
    let i2 = if theta_star == theta_hat { fisher_fn(theta_star)? } else { i2_matrix(theta_star, theta_hat, &fisher_fn, cfg.n_quad)? };
    let h_sq = hellinger_sq(model, theta_star, theta_hat, cfg.n_hellinger_mc, root.child(3))?;
    let delta: Vec<f64> = theta_hat.iter().zip(theta_star).map(|(a, b)| a - b).collect();
    let ratio = (delta.iter().any(|&d| d != 0.0)).then(|| h_sq.value / i2.quad_form(&delta));
    let fisher_star = fisher_fn(theta_star)?;
    let fi_norm_sq = fisher_star.quad_form(&delta);
    let sandwich = (radius_ok && fi_radius_ok).then(|| {
        let slack = 3.0 * h_sq.std_error;
        h_sq.value + slack >= 3.0 / 32.0 * fi_norm_sq && h_sq.value - slack <= 15.0 / 32.0 * fi_norm_sq
    });
    Ok(LocalizationReport {
        model_id: model.model_id().to_string(),
        theta_star: theta_star.to_vec(),
        theta_hat: theta_hat.to_vec(),
        b1,
        b2,
        hellinger_sup: sup,
        radius_threshold: threshold,
        radius_ok,
        fi_sup_dev,
        fi_radius_ok,
        i2,
        h_sq,
        ratio,
        fisher_star,
        fi_norm_sq,
        sandwich,
    })
}

/// Fits the continuous MLE on `data` and reports around it.
pub fn full_report(model: &dyn ModelSpec, data: &TrajectoryDataset, theta_star: &[f64], cfg: &LocalizationConfig) -> Result<LocalizationReport> {
    let fit = mle_continuous(model, data, &cfg.mle)?;
    if !fit.converged {
        return Err(Error::NonConvergence(format!(
            "MLE stopped with projected gradient {:.3e}",
            fit.grad_norm
        )));
    }
    localization_report(model, theta_star, &fit.theta_hat, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::{fisher_two_state, TwoStateModel};

    #[test]
    fn radius_hand_values() {
        assert!(check_radius(0.04, 1.0, 1.0));
        assert!(!check_radius(0.05, 1.0, 1.0));
        assert!(check_radius(0.044, 0.0, 1.0));
        assert!((radius_threshold(1.0, 1.0) - 0.044_194_17).abs() < 1e-8);
    }

    #[test]
    fn i2_two_state() {
        let f = |th: &[f64]| fisher_two_state(th[0], 2);
        let v = i2_matrix(&[0.4], &[0.6], f, 64).unwrap().entries()[(0, 0)];
        assert!((v - 4.054_651_08).abs() < 1e-7);
        let hi = i2_matrix(&[0.4], &[0.6], f, 4096).unwrap().entries()[(0, 0)];
        assert!(((v - hi) / hi).abs() < 1e-8);
    }

    #[test]
    fn fi_radius_hand_values() {
        let f = |th: &[f64]| fisher_two_state(th[0], 10);
        assert_eq!(check_fi_radius(&[0.5], &[0.5], f, 17).unwrap(), (0.0, true));
        let (d, ok) = check_fi_radius(&[0.5], &[0.4], f, 17).unwrap();
        assert!((d - 0.041_666_67).abs() < 1e-7 && ok);
        let (d, ok) = check_fi_radius(&[0.5], &[0.1], f, 17).unwrap();
        assert!((d - 1.777_777_78).abs() < 1e-7 && !ok);
    }

    #[test]
    fn two_state_moment_limits() {
        let stream = derive_stream(1, 2);
        let m = TwoStateModel::new(0.5, 0.05, 2).unwrap();
        let (b1, b2) = estimate_moments(&m, &[0.5], &[0.5], &MomentConfig::default(), stream).unwrap();
        assert!((b1.value - 1.0).abs() < 1e-12 && (b2.value - 1.0).abs() < 1e-12);
        let m = TwoStateModel::new(0.5, 0.05, 500).unwrap();
        let (b1, b2) = estimate_moments(&m, &[0.5], &[0.5], &MomentConfig::default(), stream).unwrap();
        assert!((b1.value / 3f64.powf(0.25) - 1.0).abs() < 0.02);
        assert!((b2.value - 1.0).abs() < 0.02);
    }

    #[test]
    fn local_ratio_near_quarter() {
        let m = TwoStateModel::new(0.5, 0.05, 2).unwrap();
        let r = verify_local_quadratic(&m, &[0.5], &[0.51], 1000, derive_stream(0, 0)).unwrap();
        assert!((r.ratio - 0.25).abs() < 1e-4);
        assert!(r.radius_ok && r.within_bounds);
    }
}
