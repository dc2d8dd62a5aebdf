//! Grid covers, discretized MLE over a cover, and continuous MLE by
//! projected gradient ascent.

use log::warn;
use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{dataset_loglik, dataset_loglik_score, ModelSpec};
use crate::rng::{derive_stream, RngStream};
use crate::types::{FisherMatrix, ParamDomain, ParamVector, TrajectoryDataset};

pub const DEFAULT_COVER_CAP: usize = 10_000_000;

const START_STREAM: u64 = 0x5354_4152_5453;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoverMetric {
    /// `‖θ − θ'‖_{I_max}`.
    MaxFisher,
    Euclidean,
}

#[derive(Clone, Debug)]
pub struct CoverSet {
    pub points: Vec<ParamVector>,
    pub epsilon: f64,
    pub metric: CoverMetric,
    pub domain: ParamDomain,
    /// Per-axis grid spacing actually used.
    pub steps: Vec<f64>,
    scale: f64,
}

impl CoverSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Distance from `theta` to the closest cover point, in the cover metric
    /// (the max-FI metric is bounded by `√λ_max` times the Euclidean one).
    pub fn distance_to_nearest(&self, theta: &[f64]) -> f64 {
        self.points
            .iter()
            .map(|c| c.iter().zip(theta).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
            .sqrt()
            * self.scale
    }

    /// Largest nearest-point distance over `n` uniform domain draws.
    pub fn audit(&self, n: usize, stream: RngStream) -> f64 {
        let dists: Vec<f64> = (0..n as u64)
            .into_par_iter()
            .map(|i| {
                let th = self.domain.sample_uniform(&mut stream.child(i).rng());
                self.distance_to_nearest(&th)
            })
            .collect();
        dists.into_iter().fold(0.0, f64::max)
    }
}

fn grid_axes(domain: &ParamDomain, h: f64, cap: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let (lo, hi) = domain.bounding_box();
    let mut size = 1.0f64;
    let mut axes = Vec::with_capacity(lo.len());
    let mut steps = Vec::with_capacity(lo.len());
    for (a, b) in lo.iter().zip(&hi) {
        let n = (((b - a) / h) * (1.0 - 1e-12)).ceil().max(1.0);
        size *= n;
        if size > cap as f64 {
            return Err(Error::CoverTooLarge { size, cap });
        }
        let n = n as usize;
        let step = (b - a) / n as f64;
        axes.push((0..n).map(|j| a + (j as f64 + 0.5) * step).collect());
        steps.push(step);
    }
    Ok((axes, steps))
}

fn build(domain: &ParamDomain, epsilon: f64, scale: f64, metric: CoverMetric, cap: usize) -> Result<CoverSet> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let p = domain.dim();
    let h = 2.0 * epsilon / (scale * (p as f64).sqrt());
    let (axes, steps) = grid_axes(domain, h, cap)?;
    let mut points = Vec::new();
    let mut idx = vec![0usize; p];
    loop {
        let c: Vec<f64> = idx.iter().enumerate().map(|(k, &j)| axes[k][j]).collect();
        match domain {
            ParamDomain::Box { .. } => points.push(ParamVector::new(c)?),
            ParamDomain::Ball { center, radius } => {
                // keep every cell that meets the ball, moving outside centers onto it
                let gap2: f64 = c
                    .iter()
                    .zip(center)
                    .zip(&steps)
                    .map(|((x, o), s)| ((x - o).abs() - s / 2.0).max(0.0).powi(2))
                    .sum();
                if gap2.sqrt() <= *radius {
                    points.push(ParamVector::new(domain.project(&c))?);
                }
            }
        }
        let mut k = 0;
        loop {
            if k == p {
                return Ok(CoverSet {
                    points,
                    epsilon,
                    metric,
                    domain: domain.clone(),
                    steps,
                    scale,
                });
            }
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Cell-centred grid whose covering radius in `‖·‖_{I_max}` is at most `epsilon`.
pub fn build_cover(domain: &ParamDomain, i_max: &FisherMatrix, epsilon: f64) -> Result<CoverSet> {
    build_cover_capped(domain, i_max, epsilon, DEFAULT_COVER_CAP)
}

pub fn build_cover_capped(domain: &ParamDomain, i_max: &FisherMatrix, epsilon: f64, cap: usize) -> Result<CoverSet> {
    if i_max.dim() != domain.dim() {
        return Err(Error::DimensionMismatch {
            expected: domain.dim(),
            got: i_max.dim(),
        });
    }
    if !(i_max.lambda_min() > 0.0) {
        return Err(Error::Degenerate("I_max must be positive definite".into()));
    }
    build(domain, epsilon, i_max.lambda_max().sqrt(), CoverMetric::MaxFisher, cap)
}

pub fn build_euclidean_cover(domain: &ParamDomain, epsilon: f64, cap: usize) -> Result<CoverSet> {
    build(domain, epsilon, 1.0, CoverMetric::Euclidean, cap)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MleMethod {
    Discretized,
    Continuous,
}

#[derive(Clone, Debug)]
pub struct MleResult {
    pub theta_hat: ParamVector,
    pub loglik: f64,
    pub method: MleMethod,
    pub n_starts: usize,
    pub converged: bool,
    /// Cover resolution; 0 for the continuous estimator.
    pub epsilon: f64,
    pub iterations: usize,
    /// Projected-gradient norm of the per-transition log-likelihood.
    pub grad_norm: f64,
}

/// Exact argmax over cover points, ties to the lowest index.
pub fn mle_discretized(model: &dyn ModelSpec, data: &TrajectoryDataset, cover: &CoverSet) -> Result<MleResult> {
    if cover.domain.dim() != model.param_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.param_dim(),
            got: cover.domain.dim(),
        });
    }
    let values: Vec<f64> = cover.points.par_iter().map(|c| dataset_loglik(model, c, data)).collect();
    let mut best: Option<(usize, f64)> = None;
    let mut skipped = 0;
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            skipped += 1;
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    if skipped > 0 {
        warn!("{skipped} cover points with non-finite log-likelihood were excluded");
    }
    let (i, l) = best.ok_or_else(|| Error::Degenerate("no cover point has a finite log-likelihood".into()))?;
    Ok(MleResult {
        theta_hat: cover.points[i].clone(),
        loglik: l,
        method: MleMethod::Discretized,
        n_starts: 1,
        converged: true,
        epsilon: cover.epsilon,
        iterations: 0,
        grad_norm: f64::NAN,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MleConfig {
    /// Starts for non-concave families; concave families use the domain center.
    pub n_starts: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for MleConfig {
    fn default() -> Self {
        MleConfig {
            n_starts: 8,
            max_iters: 2000,
            tol: 1e-8,
            seed: 0,
        }
    }
}

struct Ascent {
    theta: Vec<f64>,
    value: f64,
    converged: bool,
    iterations: usize,
    grad_norm: f64,
}

fn projected_grad_norm(domain: &ParamDomain, theta: &[f64], g: &DVector<f64>) -> f64 {
    let stepped: Vec<f64> = theta.iter().zip(g.iter()).map(|(a, b)| a + b).collect();
    domain
        .project(&stepped)
        .iter()
        .zip(theta)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Projected ascent on the per-transition average log-likelihood with
/// Barzilai–Borwein steps and Armijo backtracking.
fn ascend(model: &dyn ModelSpec, data: &TrajectoryDataset, start: Vec<f64>, cfg: &MleConfig) -> Ascent {
    const ARMIJO: f64 = 1e-4;
    let domain = model.domain();
    let scale = 1.0 / (data.m() * model.horizon().saturating_sub(1).max(1)) as f64;
    let eval = |th: &[f64]| {
        let (l, g) = dataset_loglik_score(model, th, data);
        (l * scale, g * scale)
    };
    let mut theta = domain.project(&start);
    let (mut f, mut g) = eval(&theta);
    let mut alpha = 1.0;
    let mut pg = projected_grad_norm(domain, &theta, &g);
    for it in 0..cfg.max_iters {
        if pg <= cfg.tol {
            return Ascent {
                theta,
                value: f,
                converged: true,
                iterations: it,
                grad_norm: pg,
            };
        }
        let slack = 1e-13 * (1.0 + f.abs());
        let mut accepted = None;
        for _ in 0..80 {
            let trial: Vec<f64> = theta.iter().zip(g.iter()).map(|(a, b)| a + alpha * b).collect();
            let trial = domain.project(&trial);
            let gain: f64 = trial.iter().zip(&theta).zip(g.iter()).map(|((a, b), gi)| (a - b) * gi).sum();
            let (ft, gt) = eval(&trial);
            if ft.is_finite() && ft >= f + ARMIJO * gain - slack {
                accepted = Some((trial, ft, gt));
                break;
            }
            alpha *= 0.5;
        }
        let Some((next, f_next, g_next)) = accepted else {
            break;
        };
        let s: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y = &g_next - &g;
        let ss: f64 = s.iter().map(|v| v * v).sum();
        let sy: f64 = s.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        alpha = if sy < 0.0 && ss > 0.0 { (ss / -sy).clamp(1e-10, 1e10) } else { (alpha * 2.0).min(1e10) };
        theta = next;
        f = f_next;
        g = g_next;
        pg = projected_grad_norm(domain, &theta, &g);
    }
    Ascent {
        converged: pg <= cfg.tol,
        theta,
        value: f,
        iterations: cfg.max_iters,
        grad_norm: pg,
    }
}

/// Continuous MLE; multi-start for non-concave families. The best final
/// log-likelihood wins, ties to the lowest start index.
pub fn mle_continuous(model: &dyn ModelSpec, data: &TrajectoryDataset, cfg: &MleConfig) -> Result<MleResult> {
    if data.trajectories.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let starts: Vec<Vec<f64>> = if model.is_log_concave() {
        vec![model.domain().center()]
    } else {
        if cfg.n_starts == 0 {
            return Err(Error::invalid("n_starts must be positive"));
        }
        (0..cfg.n_starts as u64)
            .map(|j| {
                let mut rng = derive_stream(cfg.seed, START_STREAM).child(j).rng();
                model.domain().sample_uniform(&mut rng)
            })
            .collect()
    };
    let runs: Vec<Ascent> = starts.into_par_iter().map(|s| ascend(model, data, s, cfg)).collect();
    let n_starts = runs.len();
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.value > runs[best].value {
            best = i;
        }
    }
    let r = &runs[best];
    let theta = model.canonicalize(&r.theta);
    let loglik = dataset_loglik(model, &theta, data);
    if !r.converged {
        warn!("continuous MLE stopped with projected gradient {:.3e}", r.grad_norm);
    }
    Ok(MleResult {
        theta_hat: ParamVector::new(theta)?,
        loglik,
        method: MleMethod::Continuous,
        n_starts,
        converged: r.converged,
        epsilon: 0.0,
        iterations: r.iterations,
        grad_norm: r.grad_norm,
    })
}

/// `ΔᵀĪΔ` with `Δ = θ̂ − θ*`.
pub fn fisher_weighted_error(theta_hat: &[f64], theta_star: &[f64], fisher_bar: &FisherMatrix) -> Result<f64> {
    if theta_hat.len() != fisher_bar.dim() || theta_star.len() != fisher_bar.dim() {
        return Err(Error::DimensionMismatch {
            expected: fisher_bar.dim(),
            got: theta_hat.len(),
        });
    }
    let d: Vec<f64> = theta_hat.iter().zip(theta_star).map(|(a, b)| a - b).collect();
    Ok(fisher_bar.quad_form(&d))
}

pub fn canonicalize(model: &dyn ModelSpec, theta: &[f64]) -> Result<ParamVector> {
    ParamVector::new(model.canonicalize(theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::{fisher_two_state, TwoStateModel};
    use crate::types::{Normalization, Trajectory};

    fn single(path: Vec<u32>) -> TrajectoryDataset {
        TrajectoryDataset::new("two_state", 3, 0, vec![Trajectory::discrete(path)]).unwrap()
    }

    #[test]
    fn one_dimensional_cover_count() {
        let dom = ParamDomain::new_box(vec![0.1], vec![0.9]).unwrap();
        let imax = FisherMatrix::scalar(100.0, Normalization::PerTrajectory).unwrap();
        let c = build_cover(&dom, &imax, 0.5).unwrap();
        assert_eq!(c.len(), 8);
        assert!((c.points[0][0] - 0.15).abs() < 1e-12);
        assert!((c.distance_to_nearest(&[0.1]) - 0.5).abs() < 1e-9);
        assert_eq!(build_cover(&dom, &imax, 4.0).unwrap().len(), 1);
        assert!(matches!(
            build_cover_capped(&dom, &imax, 1e-6, 1000),
            Err(Error::CoverTooLarge { .. })
        ));
    }

    #[test]
    fn discretized_hand_cases() {
        let m = TwoStateModel::new(0.5, 0.05, 3).unwrap();
        let dom = ParamDomain::new_box(vec![0.0], vec![1.0]).unwrap();
        let cover = CoverSet {
            points: [0.25, 0.5, 0.75].iter().map(|&v| ParamVector::scalar(v).unwrap()).collect(),
            epsilon: 0.125,
            metric: CoverMetric::Euclidean,
            domain: dom,
            steps: vec![0.25],
            scale: 1.0,
        };
        for (path, want) in [(vec![1, 1, 1], 0.75), (vec![1, 2, 1], 0.25), (vec![1, 1, 2], 0.5)] {
            let r = mle_discretized(&m, &single(path), &cover).unwrap();
            assert_eq!(r.theta_hat[0], want);
        }
    }

    #[test]
    fn continuous_two_state_stationary_point() {
        let m = TwoStateModel::new(0.5, 0.05, 3).unwrap();
        let r = mle_continuous(&m, &single(vec![1, 1, 2]), &MleConfig::default()).unwrap();
        assert!(r.converged);
        assert!((r.theta_hat[0] - 0.5).abs() < 1e-8);
        let r = mle_continuous(&m, &single(vec![2, 2, 2]), &MleConfig::default()).unwrap();
        assert!((r.theta_hat[0] - 0.95).abs() < 1e-12);
    }

    #[test]
    fn weighted_error_hand_value() {
        let f = fisher_two_state(0.5, 11).unwrap().per_step(11);
        let e = fisher_weighted_error(&[0.6], &[0.5], &f).unwrap();
        assert!((e - 0.036_363_636).abs() < 1e-8);
    }
}
