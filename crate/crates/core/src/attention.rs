//! Single-layer linear-attention next-token model over a vocabulary of `K`
//! tokens with fixed embeddings `E` (K×d) and classifier head `C` ((K−1)×d).
//!
//! Given the context `z_0..z_t`, the logits of `z_{t+1}` are
//! `J C (1/t) Σ_{s<t} e_s e_sᵀ W e_t` where `W = mat(θ)` (column-major),
//! `e_s` is the embedding of `z_s`, and `J` pads a trailing zero logit.
//! Stored paths are `z_0, …, z_T` with token ids `1..=K`; `(z_0, z_1)` is
//! drawn uniformly over ordered pairs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, op_norm, sym_eigen};
use crate::rng::{derive_stream, SimRng};
use crate::types::{FisherMatrix, Normalization, ParamDomain, Trajectory};

#[derive(Clone, Debug)]
pub struct AttentionModel {
    k: usize,
    d: usize,
    radius: f64,
    horizon: usize,
    embeddings: DMatrix<f64>,
    head: DMatrix<f64>,
    theta: Vec<f64>,
    domain: ParamDomain,
}

impl AttentionModel {
    pub fn new(embeddings: DMatrix<f64>, head: DMatrix<f64>, radius: f64, horizon: usize, theta: Vec<f64>) -> Result<Self> {
        let (k, d) = embeddings.shape();
        if k < 2 || d == 0 || d + 1 > k {
            return Err(Error::invalid("need d ≥ 1 and K ≥ d + 1"));
        }
        if head.shape() != (k - 1, d) {
            return Err(Error::DimensionMismatch { expected: k - 1, got: head.nrows() });
        }
        if horizon < 2 {
            return Err(Error::invalid("horizon must be at least 2"));
        }
        if embeddings.row_iter().any(|r| r.norm() > 1.0 + 1e-12) {
            return Err(Error::invalid("embedding rows must have norm at most 1"));
        }
        if embeddings.rank(1e-10) < d || head.rank(1e-10) < d {
            return Err(Error::Degenerate("embeddings and head must have full column rank".into()));
        }
        if op_norm(&head) < 1.0 - 1e-12 {
            return Err(Error::invalid("classifier head must have operator norm at least 1"));
        }
        if theta.len() != d * d {
            return Err(Error::DimensionMismatch { expected: d * d, got: theta.len() });
        }
        let domain = ParamDomain::new_ball(vec![0.0; d * d], radius)?;
        if !domain.contains(&theta) {
            return Err(Error::invalid("true parameter lies outside the ball"));
        }
        Ok(AttentionModel {
            k,
            d,
            radius,
            horizon,
            embeddings,
            head,
            theta,
            domain,
        })
    }

    /// Gaussian embeddings normalized to unit rows and a Gaussian head
    /// rescaled to operator norm 1, both drawn from `embeddings_seed`.
    pub fn from_seed(k: usize, d: usize, radius: f64, horizon: usize, theta: Vec<f64>, embeddings_seed: u64) -> Result<Self> {
        if k < 2 || d == 0 || d + 1 > k {
            return Err(Error::invalid("need d ≥ 1 and K ≥ d + 1"));
        }
        let mut rng = derive_stream(embeddings_seed, 0).rng();
        let mut e = DMatrix::from_fn(k, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        for mut row in e.row_iter_mut() {
            let n = row.norm();
            row /= n;
        }
        let c = DMatrix::from_fn(k - 1, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let c = &c / op_norm(&c);
        Self::new(e, c, radius, horizon, theta)
    }

    pub fn vocab_size(&self) -> usize {
        self.k
    }

    pub fn embed_dim(&self) -> usize {
        self.d
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn embeddings(&self) -> &DMatrix<f64> {
        &self.embeddings
    }

    pub fn head(&self) -> &DMatrix<f64> {
        &self.head
    }

    pub fn head_norm(&self) -> f64 {
        op_norm(&self.head)
    }

    /// `(1/K) exp(−2 R ‖C‖)`.
    pub fn min_prob_floor(&self) -> f64 {
        (-2.0 * self.radius * self.head_norm()).exp() / self.k as f64
    }

    fn embedding(&self, tok: u32) -> DVector<f64> {
        self.embeddings.row(tok as usize - 1).transpose()
    }

    fn gram(&self, context: &[u32]) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.d, self.d);
        for &z in context {
            let e = self.embedding(z);
            g += &e * e.transpose();
        }
        g
    }

    fn step_from_gram(&self, gram: &DMatrix<f64>, t: usize, last: u32) -> DMatrix<f64> {
        let d = self.d;
        let a = &self.head * gram / t as f64;
        let e = self.embedding(last);
        let mut m = DMatrix::zeros(self.k, d * d);
        for col in 0..d {
            for r in 0..self.k - 1 {
                for i in 0..d {
                    m[(r, col * d + i)] = e[col] * a[(r, i)];
                }
            }
        }
        m
    }

    /// Step matrix `M` with `logits = M θ` for the context `z_0..z_t`, `t ≥ 1`.
    pub fn step_matrix(&self, context: &[u32]) -> Result<DMatrix<f64>> {
        if context.len() < 2 {
            return Err(Error::invalid("context needs at least two tokens"));
        }
        if let Some(&bad) = context.iter().find(|&&z| z == 0 || z as usize > self.k) {
            return Err(Error::invalid(format!("token {bad} outside vocabulary")));
        }
        let t = context.len() - 1;
        Ok(self.step_from_gram(&self.gram(&context[..t]), t, context[t]))
    }

    pub fn next_token_dist(&self, theta: &[f64], context: &[u32]) -> Result<Vec<f64>> {
        let m = self.step_matrix(context)?;
        Ok(softmax(&(m * DVector::from_column_slice(theta))))
    }

    /// `Mᵀ(diag p − p pᵀ)M` at one context.
    pub fn conditional_fisher(&self, theta: &[f64], context: &[u32]) -> Result<DMatrix<f64>> {
        let m = self.step_matrix(context)?;
        let p = softmax(&(&m * DVector::from_column_slice(theta)));
        Ok(m.transpose() * categorical_cov(&p) * m)
    }

    /// Calls `f(M, target)` for each transition of a path.
    fn for_each_step<F: FnMut(&DMatrix<f64>, usize)>(&self, tokens: &[u32], mut f: F) {
        let mut g = DMatrix::zeros(self.d, self.d);
        for t in 1..tokens.len() - 1 {
            let e = self.embedding(tokens[t - 1]);
            g += &e * e.transpose();
            let m = self.step_from_gram(&g, t, tokens[t]);
            f(&m, tokens[t + 1] as usize - 1);
        }
    }

    fn tokens<'a>(&self, traj: &'a Trajectory) -> &'a [u32] {
        traj.tokens().expect("attention paths are token sequences")
    }
}

/// Softmax of `[x; 0]`: the last logit is pinned to zero.
pub fn pinned_softmax(x: &[f64]) -> Vec<f64> {
    let mut padded = x.to_vec();
    padded.push(0.0);
    softmax(&DVector::from_vec(padded))
}

fn softmax(logits: &DVector<f64>) -> Vec<f64> {
    let lse = log_sum_exp(logits.as_slice());
    logits.iter().map(|v| (v - lse).exp()).collect()
}

fn categorical_cov(p: &[f64]) -> DMatrix<f64> {
    let k = p.len();
    DMatrix::from_fn(k, k, |i, j| if i == j { p[i] - p[i] * p[i] } else { -p[i] * p[j] })
}

fn draw_categorical(p: &[f64], rng: &mut SimRng) -> u32 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i as u32 + 1;
        }
    }
    p.len() as u32
}

impl crate::model::ModelSpec for AttentionModel {
    fn model_id(&self) -> &str {
        "attention"
    }

    fn param_dim(&self) -> usize {
        self.d * self.d
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn trajectory_len(&self) -> usize {
        self.horizon + 1
    }

    fn domain(&self) -> &ParamDomain {
        &self.domain
    }

    fn is_log_concave(&self) -> bool {
        true
    }

    fn true_param(&self) -> &[f64] {
        &self.theta
    }

    fn sample(&self, theta: &[f64], rng: &mut SimRng) -> Trajectory {
        let k = self.k as u32;
        let mut toks = vec![rng.random_range(1..=k), rng.random_range(1..=k)];
        let th = DVector::from_column_slice(theta);
        let mut g = DMatrix::zeros(self.d, self.d);
        for t in 1..self.horizon {
            let e = self.embedding(toks[t - 1]);
            g += &e * e.transpose();
            let m = self.step_from_gram(&g, t, toks[t]);
            let p = softmax(&(m * &th));
            toks.push(draw_categorical(&p, rng));
        }
        Trajectory::discrete(toks)
    }

    fn loglik(&self, theta: &[f64], traj: &Trajectory) -> f64 {
        self.loglik_score(theta, traj).0
    }

    fn score(&self, theta: &[f64], traj: &Trajectory) -> DVector<f64> {
        self.loglik_score(theta, traj).1
    }

    fn loglik_score(&self, theta: &[f64], traj: &Trajectory) -> (f64, DVector<f64>) {
        let th = DVector::from_column_slice(theta);
        let mut l = -2.0 * (self.k as f64).ln();
        let mut s = DVector::zeros(self.d * self.d);
        self.for_each_step(self.tokens(traj), |m, next| {
            let logits = m * &th;
            let lse = log_sum_exp(logits.as_slice());
            l += logits[next] - lse;
            let p = DVector::from_iterator(self.k, logits.iter().map(|v| (v - lse).exp()));
            s += m.row(next).transpose() - m.transpose() * p;
        });
        (l, s)
    }

    fn hessian(&self, theta: &[f64], traj: &Trajectory) -> DMatrix<f64> {
        let th = DVector::from_column_slice(theta);
        let p_dim = self.d * self.d;
        let mut h = DMatrix::zeros(p_dim, p_dim);
        self.for_each_step(self.tokens(traj), |m, _| {
            let p = softmax(&(m * &th));
            h -= m.transpose() * categorical_cov(&p) * m;
        });
        h
    }

    fn fisher_upper_bound(&self) -> Option<FisherMatrix> {
        let p = self.d * self.d;
        let c = self.head_norm();
        let bound = (self.horizon - 1) as f64 * c * c / 2.0;
        FisherMatrix::new(DMatrix::identity(p, p) * bound, Normalization::PerTrajectory).ok()
    }

    fn check_trajectory(&self, traj: &Trajectory) -> Result<()> {
        match traj.tokens() {
            Some(t) if t.len() == self.horizon + 1 && t.iter().all(|&z| z >= 1 && z as usize <= self.k) => Ok(()),
            _ => Err(Error::invalid(format!(
                "expected {} tokens in 1..={}",
                self.horizon + 1,
                self.k
            ))),
        }
    }
}

/// Smallest eigenvalue of `Jᵀ(diag p − p pᵀ)J` (first `K−1` coordinates)
/// and the lower bound `min_i p_i / (4(K−1))`.
pub fn min_eig_reduced_cov(p: &[f64]) -> Result<(f64, f64)> {
    let k = p.len();
    if k < 2 {
        return Err(Error::invalid("need K ≥ 2"));
    }
    if p.iter().any(|&v| !(v > 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("p must be a strictly positive probability vector"));
    }
    let cov = categorical_cov(&p[..k - 1]);
    let (eig, _) = sym_eigen(&cov);
    let mu = p.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok((eig[0], mu / (4.0 * (k - 1) as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;

    #[test]
    fn reduced_cov_hand_values() {
        let (l, b) = min_eig_reduced_cov(&[0.5, 0.5]).unwrap();
        assert!((l - 0.25).abs() < 1e-15 && (b - 0.125).abs() < 1e-15);
        let third = 1.0 / 3.0;
        let (l, b) = min_eig_reduced_cov(&[third; 3]).unwrap();
        assert!((l - 1.0 / 9.0).abs() < 1e-12 && (b - 1.0 / 24.0).abs() < 1e-12);
        assert!(min_eig_reduced_cov(&[0.5, 0.6]).is_err());
        assert!(min_eig_reduced_cov(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn zero_parameter_is_uniform() {
        let m = AttentionModel::from_seed(5, 2, 1.0, 8, vec![0.0; 4], 3).unwrap();
        let p = m.next_token_dist(&[0.0; 4], &[1, 4, 2, 5]).unwrap();
        assert!(p.iter().all(|v| (v - 0.2).abs() < 1e-15));
        assert_eq!(m.trajectory_len(), 9);
    }

    #[test]
    fn last_row_is_zero() {
        let m = AttentionModel::from_seed(4, 2, 1.0, 8, vec![0.0; 4], 9).unwrap();
        let s = m.step_matrix(&[2, 3, 1]).unwrap();
        assert!(s.row(3).iter().all(|&v| v == 0.0));
        assert!(op_norm(&s) <= m.head_norm() + 1e-12);
    }

    #[test]
    fn one_dimensional_hand_value() {
        let e = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
        let c = DMatrix::from_column_slice(1, 1, &[2.0]);
        let m = AttentionModel::new(e, c, 1.0, 3, vec![0.5]).unwrap();
        let s = m.step_matrix(&[1, 1]).unwrap();
        assert_eq!(s[(0, 0)], 2.0);
        assert_eq!(s[(1, 0)], 0.0);
    }
}
