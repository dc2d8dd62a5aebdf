//! Uniform interface over the generative families and the Monte Carlo
//! machinery shared by all of them.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{derive_stream, RngStream, SimRng};
use crate::types::{FisherMatrix, Normalization, ParamDomain, Trajectory, TrajectoryDataset};

pub trait ModelSpec: Send + Sync {
    fn model_id(&self) -> &str;

    fn param_dim(&self) -> usize;

    /// Horizon `T`; every family has `T - 1` random transitions.
    fn horizon(&self) -> usize;

    /// Number of stored states per trajectory.
    fn trajectory_len(&self) -> usize {
        self.horizon()
    }

    fn domain(&self) -> &ParamDomain;

    /// Whether the log-likelihood is concave in the parameter.
    fn is_log_concave(&self) -> bool;

    /// The data-generating parameter this model was configured with.
    fn true_param(&self) -> &[f64];

    fn sample(&self, theta: &[f64], rng: &mut SimRng) -> Trajectory;

    fn loglik(&self, theta: &[f64], traj: &Trajectory) -> f64;

    fn score(&self, theta: &[f64], traj: &Trajectory) -> DVector<f64>;

    fn hessian(&self, theta: &[f64], traj: &Trajectory) -> DMatrix<f64>;

    fn loglik_score(&self, theta: &[f64], traj: &Trajectory) -> (f64, DVector<f64>) {
        (self.loglik(theta, traj), self.score(theta, traj))
    }

    /// Closed-form trajectory Fisher information, when known.
    fn fisher_exact(&self, _theta: &[f64]) -> Option<FisherMatrix> {
        None
    }

    /// Uniform upper bound on the Fisher information over the domain.
    fn fisher_upper_bound(&self) -> Option<FisherMatrix> {
        None
    }

    /// Closed-form squared Hellinger distance between path laws.
    fn hellinger_sq_exact(&self, _theta0: &[f64], _theta1: &[f64]) -> Option<f64> {
        None
    }

    /// For scalar families: `(E[s⁴]/I², E[h²]/I²)` with `s` the score and `h`
    /// the second derivative. These are `B₁⁴` and `B₂²` at a single point.
    fn scalar_whitened_moments(&self, _theta: &[f64]) -> Option<(f64, f64)> {
        None
    }

    /// Representative of the parameter's equivalence class.
    fn canonicalize(&self, theta: &[f64]) -> Vec<f64> {
        theta.to_vec()
    }

    fn check_trajectory(&self, traj: &Trajectory) -> Result<()>;
}

pub fn check_param(model: &dyn ModelSpec, theta: &[f64]) -> Result<()> {
    if theta.len() != model.param_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.param_dim(),
            got: theta.len(),
        });
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("parameter has non-finite entries"));
    }
    Ok(())
}

/// `m` trajectories from `p_θ`; trajectory `i` uses stream `(master_seed, i)`.
pub fn simulate_dataset(model: &dyn ModelSpec, theta: &[f64], m: usize, master_seed: u64) -> Result<TrajectoryDataset> {
    check_param(model, theta)?;
    if m == 0 {
        return Err(Error::invalid("m must be positive"));
    }
    let trajectories: Vec<Trajectory> = (0..m as u64)
        .into_par_iter()
        .map(|i| model.sample(theta, &mut derive_stream(master_seed, i).rng()))
        .collect();
    TrajectoryDataset::new(model.model_id(), model.horizon(), master_seed, trajectories)
}

/// Sum of per-trajectory log-likelihoods, reduced in index order.
pub fn dataset_loglik(model: &dyn ModelSpec, theta: &[f64], data: &TrajectoryDataset) -> f64 {
    let parts: Vec<f64> = data.trajectories.par_iter().map(|z| model.loglik(theta, z)).collect();
    parts.iter().sum()
}

pub fn dataset_loglik_score(model: &dyn ModelSpec, theta: &[f64], data: &TrajectoryDataset) -> (f64, DVector<f64>) {
    let parts: Vec<(f64, DVector<f64>)> = data
        .trajectories
        .par_iter()
        .map(|z| model.loglik_score(theta, z))
        .collect();
    let mut l = 0.0;
    let mut g = DVector::zeros(model.param_dim());
    for (li, gi) in parts {
        l += li;
        g += gi;
    }
    (l, g)
}

/// Monte Carlo estimates of the two sides of the information identity and of
/// the score mean, with entrywise standard errors.
#[derive(Clone, Debug)]
pub struct InformationEstimate {
    pub n: usize,
    pub score_mean: DVector<f64>,
    pub score_mean_se: DVector<f64>,
    /// `E[s sᵀ]`.
    pub outer: DMatrix<f64>,
    pub outer_se: DMatrix<f64>,
    /// `-E[∇²ℓ]`.
    pub neg_hessian: DMatrix<f64>,
    pub neg_hessian_se: DMatrix<f64>,
    /// Standard error of the paired per-path difference `s sᵀ + ∇²ℓ`.
    pub diff_se: DMatrix<f64>,
}

impl InformationEstimate {
    pub fn fisher(&self) -> Result<FisherMatrix> {
        FisherMatrix::new(self.outer.clone(), Normalization::PerTrajectory)
    }
}

#[derive(Clone)]
struct Moments {
    s: DVector<f64>,
    s2: DVector<f64>,
    o: DMatrix<f64>,
    o2: DMatrix<f64>,
    h: DMatrix<f64>,
    h2: DMatrix<f64>,
    d: DMatrix<f64>,
    d2: DMatrix<f64>,
}

impl Moments {
    fn zeros(p: usize) -> Self {
        Moments {
            s: DVector::zeros(p),
            s2: DVector::zeros(p),
            o: DMatrix::zeros(p, p),
            o2: DMatrix::zeros(p, p),
            h: DMatrix::zeros(p, p),
            h2: DMatrix::zeros(p, p),
            d: DMatrix::zeros(p, p),
            d2: DMatrix::zeros(p, p),
        }
    }

    fn push(&mut self, s: &DVector<f64>, hess: &DMatrix<f64>) {
        let o = s * s.transpose();
        let nh = -hess;
        let d = &o - &nh;
        self.s += s;
        self.s2 += s.component_mul(s);
        self.o2 += o.component_mul(&o);
        self.o += o;
        self.h2 += nh.component_mul(&nh);
        self.h += nh;
        self.d2 += d.component_mul(&d);
        self.d += d;
    }

    fn merge(&mut self, other: &Moments) {
        self.s += &other.s;
        self.s2 += &other.s2;
        self.o += &other.o;
        self.o2 += &other.o2;
        self.h += &other.h;
        self.h2 += &other.h2;
        self.d += &other.d;
        self.d2 += &other.d2;
    }
}

const CHUNK: usize = 256;

fn se_from(sum: f64, sum2: f64, n: f64) -> f64 {
    let mean = sum / n;
    let var = ((sum2 / n - mean * mean) * n / (n - 1.0)).max(0.0);
    (var / n).sqrt()
}

/// Path `i` of a Monte Carlo study seeded by `stream`.
pub fn path_rng(stream: RngStream, i: u64) -> SimRng {
    stream.child(i).rng()
}

/// Information-identity study over `n` paths drawn from `p_θ`.
pub fn information_mc(model: &dyn ModelSpec, theta: &[f64], n: usize, stream: RngStream) -> Result<InformationEstimate> {
    check_param(model, theta)?;
    if n < 2 {
        return Err(Error::invalid("need at least two paths"));
    }
    let p = model.param_dim();
    let n_chunks = n.div_ceil(CHUNK);
    let partials: Vec<Moments> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = Moments::zeros(p);
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let z = model.sample(theta, &mut path_rng(stream, i as u64));
                acc.push(&model.score(theta, &z), &model.hessian(theta, &z));
            }
            acc
        })
        .collect();
    let mut tot = Moments::zeros(p);
    for part in &partials {
        tot.merge(part);
    }
    let nf = n as f64;
    let mat_se = |sum: &DMatrix<f64>, sum2: &DMatrix<f64>| DMatrix::from_fn(p, p, |i, j| se_from(sum[(i, j)], sum2[(i, j)], nf));
    let outer = &tot.o / nf;
    let outer = (&outer + outer.transpose()) * 0.5;
    let neg_hessian = &tot.h / nf;
    let neg_hessian = (&neg_hessian + neg_hessian.transpose()) * 0.5;
    Ok(InformationEstimate {
        n,
        score_mean: &tot.s / nf,
        score_mean_se: DVector::from_fn(p, |i, _| se_from(tot.s[i], tot.s2[i], nf)),
        outer_se: mat_se(&tot.o, &tot.o2),
        neg_hessian_se: mat_se(&tot.h, &tot.h2),
        diff_se: mat_se(&tot.d, &tot.d2),
        outer,
        neg_hessian,
    })
}

/// Trajectory Fisher information: closed form when the family has one,
/// otherwise the Monte Carlo mean of score outer products.
pub fn fisher_information(model: &dyn ModelSpec, theta: &[f64], n_mc: usize, stream: RngStream) -> Result<FisherMatrix> {
    if let Some(f) = model.fisher_exact(theta) {
        return Ok(f);
    }
    information_mc(model, theta, n_mc, stream)?.fisher()
}

/// Maps `f` over `n` fresh paths from `p_θ` in parallel, results in path order.
pub fn map_paths<T, F>(model: &dyn ModelSpec, theta: &[f64], n: usize, stream: RngStream, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&Trajectory) -> T + Sync + Send,
{
    (0..n as u64)
        .into_par_iter()
        .map(|i| f(&model.sample(theta, &mut path_rng(stream, i))))
        .collect()
}
