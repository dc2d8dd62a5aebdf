//! Two-state Markov chain and the equal-weight mixture of two such chains.
//!
//! States are labelled 1 and 2. The chain stays in its current state with
//! probability θ. Path probabilities are taken with respect to counting
//! measure on `{1,2}^T`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{path_rng, ModelSpec};
use crate::numeric::{log_add_exp, log_binomials, sigmoid};
use crate::rng::{RngStream, SimRng};
use crate::types::{FisherMatrix, Normalization, ParamDomain, Trajectory};

fn check_mu(mu: f64) -> Result<()> {
    if !(mu > 0.0 && mu < 0.5) {
        return Err(Error::invalid(format!("mu must lie in (0, 1/2), got {mu}")));
    }
    Ok(())
}

fn check_horizon(t: usize) -> Result<()> {
    if t < 2 {
        return Err(Error::invalid(format!("horizon must be at least 2, got {t}")));
    }
    Ok(())
}

/// `(N_stay, N_switch)` of a path.
pub fn transition_counts(states: &[u32]) -> (u32, u32) {
    let stay = states.windows(2).filter(|w| w[0] == w[1]).count() as u32;
    (stay, states.len().saturating_sub(1) as u32 - stay)
}

fn sample_chain(theta: f64, p_first: f64, len: usize, rng: &mut SimRng) -> Vec<u32> {
    let mut z = Vec::with_capacity(len);
    let mut s = if rng.random::<f64>() < p_first { 1 } else { 2 };
    z.push(s);
    for _ in 1..len {
        if rng.random::<f64>() >= theta {
            s = 3 - s;
        }
        z.push(s);
    }
    z
}

fn check_tokens(traj: &Trajectory, len: usize) -> Result<&[u32]> {
    let z = traj
        .tokens()
        .ok_or_else(|| Error::invalid("expected a discrete trajectory over {1,2}"))?;
    if z.len() != len {
        return Err(Error::invalid(format!("trajectory length {} != horizon {len}", z.len())));
    }
    if z.iter().any(|s| *s != 1 && *s != 2) {
        return Err(Error::invalid("states must be 1 or 2"));
    }
    Ok(z)
}

#[derive(Clone, Debug)]
pub struct TwoStateModel {
    theta: [f64; 1],
    mu: f64,
    horizon: usize,
    /// Initial probability of state 1.
    p_first: f64,
    domain: ParamDomain,
}

impl TwoStateModel {
    pub fn new(theta: f64, mu: f64, horizon: usize) -> Result<Self> {
        check_mu(mu)?;
        check_horizon(horizon)?;
        if !(theta >= mu && theta <= 1.0 - mu) {
            return Err(Error::invalid(format!("theta {theta} outside [{mu}, {}]", 1.0 - mu)));
        }
        Ok(TwoStateModel {
            theta: [theta],
            mu,
            horizon,
            p_first: 0.5,
            domain: ParamDomain::new_box(vec![mu], vec![1.0 - mu])?,
        })
    }

    /// Sets the initial law to `P(z₁ = 1) = p_first`.
    pub fn with_initial(mut self, p_first: f64) -> Result<Self> {
        if !(p_first > 0.0 && p_first < 1.0) {
            return Err(Error::invalid("initial probability must lie in (0, 1)"));
        }
        self.p_first = p_first;
        Ok(self)
    }

    pub fn theta(&self) -> f64 {
        self.theta[0]
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn initial_probability(&self) -> f64 {
        self.p_first
    }

    fn log_initial(&self, s: u32) -> f64 {
        if s == 1 {
            self.p_first.ln()
        } else {
            (1.0 - self.p_first).ln()
        }
    }

    pub fn sample_path(&self, rng: &mut SimRng) -> Trajectory {
        Trajectory::discrete(sample_chain(self.theta[0], self.p_first, self.horizon, rng))
    }
}

pub fn two_state_loglik_counts(theta: f64, stay: u32, switch: u32) -> f64 {
    let a = if stay > 0 { stay as f64 * theta.ln() } else { 0.0 };
    let b = if switch > 0 { switch as f64 * (1.0 - theta).ln() } else { 0.0 };
    a + b
}

pub fn two_state_score_counts(theta: f64, stay: u32, switch: u32) -> f64 {
    stay as f64 / theta - switch as f64 / (1.0 - theta)
}

pub fn two_state_hessian_counts(theta: f64, stay: u32, switch: u32) -> f64 {
    -(stay as f64) / (theta * theta) - switch as f64 / ((1.0 - theta) * (1.0 - theta))
}

/// `I(θ) = (T-1) / (θ(1-θ))` as a 1×1 trajectory Fisher matrix.
pub fn fisher_two_state(theta: f64, horizon: usize) -> Result<FisherMatrix> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::invalid(format!("theta {theta} outside (0, 1)")));
    }
    check_horizon(horizon)?;
    FisherMatrix::scalar((horizon - 1) as f64 / (theta * (1.0 - theta)), Normalization::PerTrajectory)
}

/// Fourth moment of the score and second moment of the second derivative.
pub fn two_state_moments(theta: f64, horizon: usize) -> (f64, f64) {
    let n = (horizon - 1) as f64;
    let v = theta * (1.0 - theta);
    let cubic = theta.powi(-3) + (1.0 - theta).powi(-3);
    let cross = n * (n - 1.0) / (v * v);
    (n * cubic + 3.0 * cross, n * cubic + cross)
}

/// Exact path-law Bhattacharyya coefficient for a shared initial law.
pub fn two_state_bhattacharyya(theta0: f64, theta1: f64, horizon: usize) -> f64 {
    let step = (theta0 * theta1).sqrt() + ((1.0 - theta0) * (1.0 - theta1)).sqrt();
    step.min(1.0).powi(horizon as i32 - 1)
}

impl ModelSpec for TwoStateModel {
    fn model_id(&self) -> &str {
        "two_state"
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn horizon(&self) -> usize {
        self.horizon
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
        Trajectory::discrete(sample_chain(theta[0], self.p_first, self.horizon, rng))
    }

    fn loglik(&self, theta: &[f64], traj: &Trajectory) -> f64 {
        let z = traj.tokens().expect("discrete trajectory");
        let (stay, switch) = transition_counts(z);
        two_state_loglik_counts(theta[0], stay, switch) + self.log_initial(z[0])
    }

    fn score(&self, theta: &[f64], traj: &Trajectory) -> DVector<f64> {
        let (stay, switch) = transition_counts(traj.tokens().expect("discrete trajectory"));
        DVector::from_element(1, two_state_score_counts(theta[0], stay, switch))
    }

    fn hessian(&self, theta: &[f64], traj: &Trajectory) -> DMatrix<f64> {
        let (stay, switch) = transition_counts(traj.tokens().expect("discrete trajectory"));
        DMatrix::from_element(1, 1, two_state_hessian_counts(theta[0], stay, switch))
    }

    fn loglik_score(&self, theta: &[f64], traj: &Trajectory) -> (f64, DVector<f64>) {
        let z = traj.tokens().expect("discrete trajectory");
        let (stay, switch) = transition_counts(z);
        (
            two_state_loglik_counts(theta[0], stay, switch) + self.log_initial(z[0]),
            DVector::from_element(1, two_state_score_counts(theta[0], stay, switch)),
        )
    }

    fn fisher_exact(&self, theta: &[f64]) -> Option<FisherMatrix> {
        fisher_two_state(theta[0], self.horizon).ok()
    }

    fn fisher_upper_bound(&self) -> Option<FisherMatrix> {
        fisher_two_state(self.mu, self.horizon).ok()
    }

    fn hellinger_sq_exact(&self, theta0: &[f64], theta1: &[f64]) -> Option<f64> {
        Some(2.0 * (1.0 - two_state_bhattacharyya(theta0[0], theta1[0], self.horizon)))
    }

    fn scalar_whitened_moments(&self, theta: &[f64]) -> Option<(f64, f64)> {
        let (m4, m2h) = two_state_moments(theta[0], self.horizon);
        let i = (self.horizon - 1) as f64 / (theta[0] * (1.0 - theta[0]));
        Some((m4 / (i * i), m2h / (i * i)))
    }

    fn check_trajectory(&self, traj: &Trajectory) -> Result<()> {
        check_tokens(traj, self.horizon).map(|_| ())
    }
}

/// Equal-weight mixture of two two-state chains with uniform initial law.
#[derive(Clone, Debug)]
pub struct MixtureModel {
    theta: [f64; 2],
    mu: f64,
    horizon: usize,
    domain: ParamDomain,
}

impl MixtureModel {
    pub fn new(theta: [f64; 2], mu: f64, horizon: usize) -> Result<Self> {
        check_mu(mu)?;
        check_horizon(horizon)?;
        for t in theta {
            if !(t >= mu && t <= 1.0 - mu) {
                return Err(Error::invalid(format!("component {t} outside [{mu}, {}]", 1.0 - mu)));
            }
        }
        Ok(MixtureModel {
            theta,
            mu,
            horizon,
            domain: ParamDomain::cube(mu, 1.0 - mu, 2)?,
        })
    }

    pub fn theta(&self) -> [f64; 2] {
        self.theta
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn gap(&self) -> f64 {
        (self.theta[0] - self.theta[1]).abs()
    }

    pub fn sigma_sq_max(&self) -> f64 {
        self.theta.iter().map(|t| t * (1.0 - t)).fold(f64::MIN, f64::max)
    }

    pub fn sigma_sq_min(&self) -> f64 {
        self.theta.iter().map(|t| t * (1.0 - t)).fold(f64::MAX, f64::min)
    }

    /// Draws the latent component `B` and a path from chain `θ_B`.
    pub fn sample_with_latent(&self, theta: &[f64], rng: &mut SimRng) -> (Trajectory, usize) {
        let b = usize::from(rng.random::<f64>() >= 0.5);
        (Trajectory::discrete(sample_chain(theta[b], 0.5, self.horizon, rng)), b)
    }

    fn component_logliks(theta: &[f64], z: &[u32]) -> (f64, f64, u32, u32) {
        let (stay, switch) = transition_counts(z);
        let l0 = two_state_loglik_counts(theta[0], stay, switch);
        let l1 = two_state_loglik_counts(theta[1], stay, switch);
        (l0, l1, stay, switch)
    }
}

/// `w(z) = p_{θ₀}(z) / (p_{θ₀}(z) + p_{θ₁}(z))`.
pub fn posterior_weight(theta: &[f64], traj: &Trajectory) -> f64 {
    let (l0, l1, _, _) = MixtureModel::component_logliks(theta, traj.tokens().expect("discrete trajectory"));
    sigmoid(l0 - l1)
}

impl ModelSpec for MixtureModel {
    fn model_id(&self) -> &str {
        "mixture"
    }

    fn param_dim(&self) -> usize {
        2
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
        self.sample_with_latent(theta, rng).0
    }

    fn loglik(&self, theta: &[f64], traj: &Trajectory) -> f64 {
        let (l0, l1, _, _) = Self::component_logliks(theta, traj.tokens().expect("discrete trajectory"));
        // Each component carries the uniform initial mass ½ and the mixture weight ½.
        log_add_exp(l0, l1) - 2.0 * std::f64::consts::LN_2
    }

    fn score(&self, theta: &[f64], traj: &Trajectory) -> DVector<f64> {
        self.loglik_score(theta, traj).1
    }

    fn loglik_score(&self, theta: &[f64], traj: &Trajectory) -> (f64, DVector<f64>) {
        let (l0, l1, stay, switch) = Self::component_logliks(theta, traj.tokens().expect("discrete trajectory"));
        let w = sigmoid(l0 - l1);
        let s0 = two_state_score_counts(theta[0], stay, switch);
        let s1 = two_state_score_counts(theta[1], stay, switch);
        (
            log_add_exp(l0, l1) - 2.0 * std::f64::consts::LN_2,
            DVector::from_column_slice(&[w * s0, (1.0 - w) * s1]),
        )
    }

    fn hessian(&self, theta: &[f64], traj: &Trajectory) -> DMatrix<f64> {
        let (l0, l1, stay, switch) = Self::component_logliks(theta, traj.tokens().expect("discrete trajectory"));
        let w = sigmoid(l0 - l1);
        let s0 = two_state_score_counts(theta[0], stay, switch);
        let s1 = two_state_score_counts(theta[1], stay, switch);
        let h0 = two_state_hessian_counts(theta[0], stay, switch);
        let h1 = two_state_hessian_counts(theta[1], stay, switch);
        let v = w * (1.0 - w);
        let off = -v * s0 * s1;
        DMatrix::from_row_slice(2, 2, &[v * s0 * s0 + w * h0, off, off, v * s1 * s1 + (1.0 - w) * h1])
    }

    fn fisher_upper_bound(&self) -> Option<FisherMatrix> {
        // Complete-data information with B observed dominates the mixture's.
        let v = (self.horizon - 1) as f64 / (2.0 * self.mu * (1.0 - self.mu));
        FisherMatrix::new(DMatrix::from_diagonal_element(2, 2, v), Normalization::PerTrajectory).ok()
    }

    fn hellinger_sq_exact(&self, theta0: &[f64], theta1: &[f64]) -> Option<f64> {
        Some(mixture_hellinger_sq(theta0, theta1, self.horizon))
    }

    fn canonicalize(&self, theta: &[f64]) -> Vec<f64> {
        canonicalize_pair(theta)
    }

    fn check_trajectory(&self, traj: &Trajectory) -> Result<()> {
        check_tokens(traj, self.horizon).map(|_| ())
    }
}

/// Orders a mixture parameter so that `θ₀ ≥ θ₁`.
pub fn canonicalize_pair(theta: &[f64]) -> Vec<f64> {
    if theta[0] >= theta[1] {
        theta.to_vec()
    } else {
        vec![theta[1], theta[0]]
    }
}

/// Exact path-law squared Hellinger distance between two mixtures.
///
/// A path's probability depends only on its stay count `k`, and `2·C(T-1, k)`
/// paths share each count, so the sum over `2^T` paths collapses to `T` terms.
pub fn mixture_hellinger_sq(a: &[f64], b: &[f64], horizon: usize) -> f64 {
    let n = horizon - 1;
    let lb = log_binomials(n);
    let logp = |t: &[f64], k: usize| {
        let (s, w) = (k as u32, (n - k) as u32);
        log_add_exp(two_state_loglik_counts(t[0], s, w), two_state_loglik_counts(t[1], s, w)) - 2.0 * std::f64::consts::LN_2
    };
    let bc: f64 = (0..=n)
        .map(|k| (std::f64::consts::LN_2 + lb[k] + 0.5 * (logp(a, k) + logp(b, k))).exp())
        .sum();
    (2.0 * (1.0 - bc)).clamp(0.0, 2.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixtureIdentifiability {
    pub gamma1: f64,
    pub gamma2: f64,
}

/// Identifiability constants `(Gap²/44, 13/Gap)` at the true parameter.
pub fn mixture_identifiability(theta_star: [f64; 2]) -> Result<MixtureIdentifiability> {
    let gap = (theta_star[0] - theta_star[1]).abs();
    if gap == 0.0 || !gap.is_finite() {
        return Err(Error::Degenerate("components coincide; the mixture is not identifiable".into()));
    }
    Ok(MixtureIdentifiability {
        gamma1: gap * gap / 44.0,
        gamma2: 13.0 / gap,
    })
}

/// Path probability of a length-3 path under the closed-form three-step table.
pub fn three_step_table(theta: [f64; 2], path: [u32; 3]) -> f64 {
    let (t0, t1) = (theta[0], theta[1]);
    let stays = (path[0] == path[1]) as u32 + (path[1] == path[2]) as u32;
    match stays {
        2 => 0.25 * (t0 * t0 + t1 * t1),
        1 => 0.25 * (t0 * (1.0 - t0) + t1 * (1.0 - t1)),
        _ => 0.25 * ((1.0 - t0).powi(2) + (1.0 - t1).powi(2)),
    }
}

/// Fractions of component-0 paths with `w ≥ 1-ε` and component-1 paths with
/// `w ≤ ε`, using the simulator's latent labels.
pub fn posterior_collapse_rate(model: &MixtureModel, epsilon: f64, n: usize, stream: RngStream) -> Result<(f64, f64)> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid("epsilon must lie in (0, 1)"));
    }
    let theta = model.theta;
    let draws: Vec<(usize, f64)> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let (z, b) = model.sample_with_latent(&theta, &mut path_rng(stream, i));
            (b, posterior_weight(&theta, &z))
        })
        .collect();
    let (mut n0, mut n1, mut c0, mut c1) = (0usize, 0usize, 0usize, 0usize);
    for (b, w) in draws {
        if b == 0 {
            n0 += 1;
            c0 += usize::from(w >= 1.0 - epsilon);
        } else {
            n1 += 1;
            c1 += usize::from(w <= epsilon);
        }
    }
    let frac = |c: usize, n: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    Ok((frac(c0, n0), frac(c1, n1)))
}

#[derive(Clone, Debug)]
pub struct AlphaMixingWitness {
    /// `(k, |P(A∩B_k) − P(A)P(B_k)|, standard error)` for `k = 1..=k_max`.
    pub estimates: Vec<(usize, f64, f64)>,
    /// Large-`k` limit of the dependence, `(θ₀-θ₁)²/16`.
    pub asymptote: f64,
}

/// Dependence between `A = {z₁ = z₂ = 1}` and `B_k = {z_{2+k} = z_{3+k} = 1}`
/// along mixture paths. It does not vanish as `k` grows.
pub fn alpha_mixing_witness(theta: [f64; 2], k_max: usize, n: usize, stream: RngStream) -> Result<AlphaMixingWitness> {
    if k_max == 0 || n < 2 {
        return Err(Error::invalid("need k_max ≥ 1 and n ≥ 2"));
    }
    let model = MixtureModel {
        theta,
        mu: 0.0,
        horizon: k_max + 3,
        domain: ParamDomain::cube(0.0, 1.0, 2)?,
    };
    // Indicators are idempotent, so per-k sums of b and a·b determine every moment.
    let chunk = 4096;
    let n_chunks = n.div_ceil(chunk);
    let partials: Vec<(f64, Vec<[f64; 2]>)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut sa = 0.0;
            let mut acc = vec![[0.0f64; 2]; k_max];
            for i in c * chunk..((c + 1) * chunk).min(n) {
                let (z, _) = model.sample_with_latent(&theta, &mut path_rng(stream, i as u64));
                let z = z.tokens().unwrap();
                let a = f64::from(u8::from(z[0] == 1 && z[1] == 1));
                sa += a;
                for k in 1..=k_max {
                    let b = f64::from(u8::from(z[k + 1] == 1 && z[k + 2] == 1));
                    acc[k - 1][0] += b;
                    acc[k - 1][1] += a * b;
                }
            }
            (sa, acc)
        })
        .collect();
    let nf = n as f64;
    let mut sa = 0.0;
    let mut tot = vec![[0.0f64; 2]; k_max];
    for (a, acc) in &partials {
        sa += a;
        for (t, e) in tot.iter_mut().zip(acc) {
            t[0] += e[0];
            t[1] += e[1];
        }
    }
    let pa = sa / nf;
    let estimates = tot
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let pb = t[0] / nf;
            let pab = t[1] / nf;
            let d = pab - pa * pb;
            // Influence function of pab - pa·pb is ab - pa·b - pb·a.
            let m1 = pab - pa * pb - pb * pa;
            let m2 = pab + pa * pa * pb + pb * pb * pa - 2.0 * pa * pab - 2.0 * pb * pab + 2.0 * pa * pb * pab;
            let se = ((m2 - m1 * m1).max(0.0) / nf).sqrt();
            (k + 1, d.abs(), se)
        })
        .collect();
    Ok(AlphaMixingWitness {
        estimates,
        asymptote: (theta[0] - theta[1]).powi(2) / 16.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fisher_hand_values() {
        let f = fisher_two_state(0.5, 101).unwrap();
        assert_eq!(f.entries()[(0, 0)], 400.0);
        let f = fisher_two_state(0.1, 2).unwrap();
        assert!((f.entries()[(0, 0)] - 11.111_111_111_111).abs() < 1e-9);
    }

    #[test]
    fn moment_hand_values() {
        assert_eq!(two_state_moments(0.5, 2), (16.0, 16.0));
        assert_eq!(two_state_moments(0.5, 3), (128.0, 64.0));
    }

    #[test]
    fn identifiability_constants() {
        let c = mixture_identifiability([0.72, 0.28]).unwrap();
        assert!((c.gamma1 - 0.0044).abs() < 1e-15);
        assert!((c.gamma2 - 29.545_454_545).abs() < 1e-8);
        let c = mixture_identifiability([0.9, 0.1]).unwrap();
        assert!((c.gamma1 - 0.014_545_454_5).abs() < 1e-9);
        assert!((c.gamma2 - 16.25).abs() < 1e-12);
        assert!(mixture_identifiability([0.4, 0.4]).is_err());
    }
}
