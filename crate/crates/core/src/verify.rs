//! Desk-scale invariant suites, one per module, behind `helloc verify`.

use nalgebra::DMatrix;
use rand::Rng;

use crate::attention::{pinned_softmax, AttentionModel};
use crate::config::{ModelConfig, RunConfig, TwoStateConfig};
use crate::divergences::{clamp_events, fi_divergence, hellinger_sq, hellinger_sq_two_state, max_fi_divergence};
use crate::error::{Error, Result};
use crate::estimation::{build_cover, mle_continuous, mle_discretized, MleConfig};
use crate::gaussian::GaussianLocationModel;
use crate::harness::{records_to_csv, run_scaling, ScalingOptions};
use crate::localization::{
    check_fi_radius, check_radius, estimate_moments, i2_matrix, model_fisher_fn, probe_directions, MomentConfig,
};
use crate::markov::{three_step_table, MixtureModel, TwoStateModel};
use crate::model::{information_mc, map_paths, path_rng, simulate_dataset, ModelSpec};
use crate::noise::{make_noise, NoiseKind};
use crate::numeric::op_norm;
use crate::regression::{feature_moments, least_squares, FeatureMap, RegressionModel};
use crate::rng::derive_stream;
use crate::sin_glm::SinGlmModel;
use crate::types::{Trajectory, TrajectoryDataset};
use crate::{bounds::sufficient_m, RngStream};

pub const SUITES: [&str; 8] = [
    "core",
    "divergences",
    "models_markov",
    "models_dynamics",
    "estimation",
    "localization",
    "harness",
    "cli",
];

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub suite: &'static str,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

struct Suite {
    name: &'static str,
    results: Vec<CheckResult>,
}

impl Suite {
    fn new(name: &'static str) -> Self {
        Suite { name, results: Vec::new() }
    }

    fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.results.push(CheckResult {
            suite: self.name,
            name: name.to_string(),
            passed,
            detail,
        });
    }
}

/// Runs one suite by module name, or every suite for `"all"`.
pub fn run_suite(name: &str, seed: u64) -> Result<Vec<CheckResult>> {
    if name == "all" {
        let mut out = Vec::new();
        for s in SUITES {
            out.extend(run_suite(s, seed)?);
        }
        return Ok(out);
    }
    let stream = derive_stream(seed, 0x5E7);
    let suite = match name {
        "core" => core_suite(stream.child(0))?,
        "divergences" => divergences_suite(stream.child(1))?,
        "models_markov" => markov_suite(stream.child(2))?,
        "models_dynamics" => dynamics_suite(stream.child(3))?,
        "estimation" => estimation_suite(stream.child(4))?,
        "localization" => localization_suite(stream.child(5))?,
        "harness" => harness_suite(seed)?,
        "cli" => cli_suite()?,
        other => {
            return Err(Error::invalid(format!(
                "unknown suite {other:?}; expected one of {} or all",
                SUITES.join(", ")
            )))
        }
    };
    Ok(suite.results)
}

fn desk_models() -> Result<Vec<Box<dyn ModelSpec>>> {
    Ok(vec![
        Box::new(TwoStateModel::new(0.7, 0.05, 10)?),
        Box::new(MixtureModel::new([0.8, 0.2], 0.05, 10)?),
        regression(NoiseKind::Gaussian { nu: 1.0 }, FeatureMap::Linear, 6)?,
        Box::new(SinGlmModel::new(2, 1.0, 6, vec![0.6, 0.48, 0.0, 0.64], 2.0)?),
        Box::new(AttentionModel::from_seed(5, 2, 1.0, 6, vec![0.5, -0.3, 0.2, 0.4], 7)?),
    ])
}

fn regression(kind: NoiseKind, map: FeatureMap, horizon: usize) -> Result<Box<dyn ModelSpec>> {
    Ok(Box::new(RegressionModel::new(2, horizon, vec![0.5, -0.1, 0.2, 0.4], make_noise(kind)?, map, 2.0)?))
}

fn random_in_domain(model: &dyn ModelSpec, rng: &mut crate::SimRng) -> Vec<f64> {
    model.domain().sample_uniform(rng)
}

/// A point `frac` of the way from `a` to `b`.
fn toward(a: &[f64], b: &[f64], frac: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + frac * (y - x)).collect()
}

/// `‖θ₁ − θ₀‖²` in the segment-averaged Fisher metric with its standard
/// error: midpoint nodes along the segment, each a Monte Carlo mean of the
/// squared directional score.
fn fi_sq_mc(model: &dyn ModelSpec, a: &[f64], b: &[f64], nodes: usize, n: usize, stream: RngStream) -> (f64, f64) {
    let delta: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
    let mut value = 0.0;
    let mut var = 0.0;
    for k in 0..nodes {
        let th = toward(a, b, (k as f64 + 0.5) / nodes as f64);
        let q: Vec<f64> = map_paths(model, &th, n, stream.child(k as u64), |z| {
            let s = model.score(&th, z);
            delta.iter().zip(s.iter()).map(|(d, v)| d * v).sum::<f64>().powi(2)
        });
        let mean = q.iter().sum::<f64>() / n as f64;
        let v = q.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        value += mean / nodes as f64;
        var += v / n as f64 / (nodes * nodes) as f64;
    }
    (value, var.sqrt())
}

/// Worst standardized excess of `H²` over `FI²/4`, using the closed-form
/// information when the family has one.
fn dominance_excess(model: &dyn ModelSpec, a: &[f64], b: &[f64], n: usize, stream: RngStream) -> Result<f64> {
    let h = hellinger_sq(model, a, b, n, stream.child(0))?;
    let (fi_sq, fi_se) = if model.fisher_exact(a).is_some() {
        let fisher_fn = model_fisher_fn(model, 0, stream.child(1));
        (fi_divergence(a, b, &fisher_fn, 64)?.value.powi(2), 0.0)
    } else {
        fi_sq_mc(model, a, b, 16, n / 4, stream.child(1))
    };
    let slack = 3.0 * (h.std_error.powi(2) + (fi_se / 4.0).powi(2)).sqrt();
    Ok(h.value - 0.25 * fi_sq - slack)
}

fn identity_z(model: &dyn ModelSpec, theta: &[f64], n: usize, stream: RngStream) -> Result<(f64, f64)> {
    let est = information_mc(model, theta, n, stream)?;
    let p = theta.len();
    let mut worst_id: f64 = 0.0;
    for i in 0..p {
        for j in i..p {
            // Some entries agree path by path, leaving only roundoff in both.
            let floor = 1e-12 * (est.outer[(i, j)].abs() + est.neg_hessian[(i, j)].abs());
            let se = est.diff_se[(i, j)].max(floor).max(f64::MIN_POSITIVE);
            worst_id = worst_id.max((est.outer[(i, j)] - est.neg_hessian[(i, j)]).abs() / se);
        }
    }
    let worst_mean = (0..p)
        .map(|i| est.score_mean[i].abs() / est.score_mean_se[i].max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    Ok((worst_id, worst_mean))
}

fn core_suite(stream: RngStream) -> Result<Suite> {
    let mut s = Suite::new("core");
    for model in desk_models()? {
        let th = model.true_param().to_vec();
        let a = simulate_dataset(model.as_ref(), &th, 4, 99)?;
        let b = simulate_dataset(model.as_ref(), &th, 4, 99)?;
        s.push("dataset_regeneration", a == b, format!("{}: two constructions identical", model.model_id()));
    }

    let mut rng = stream.child(0).rng();
    let mut bad = 0;
    for _ in 0..100 {
        let (a, b, nu): (f64, f64, f64) = (rng.random_range(0.0..10.0), rng.random_range(0.0..10.0), rng.random_range(0.0..10.0));
        let m = sufficient_m(a, b, nu) as f64;
        let arg = b * m;
        if arg >= 1.0 && m.is_finite() && m < 1e300 {
            let rhs = a * arg.ln().powf(nu);
            if rhs.is_finite() && m < rhs * (1.0 - 1e-12) {
                bad += 1;
            }
        }
    }
    s.push("sufficient_m", bad == 0, format!("{bad} of 100 random triples violate m* ≥ a·log^ν(b·m*)"));

    for (k, model) in desk_models()?.iter().enumerate() {
        let f = crate::model::fisher_information(model.as_ref(), model.true_param(), 2000, stream.child(10 + k as u64))?;
        let e = f.entries();
        let sym = e == &e.transpose();
        let lmin = f.lambda_min();
        let psd = lmin >= -1e-10 * f.lambda_max().abs().max(1.0);
        s.push("fisher_psd", sym && psd, format!("{}: symmetric={sym}, λ_min={lmin:.3e}", model.model_id()));
    }
    Ok(s)
}

fn divergences_suite(stream: RngStream) -> Result<Suite> {
    let mut s = Suite::new("divergences");
    let clamps_before = clamp_events();
    let models: Vec<Box<dyn ModelSpec>> = vec![
        Box::new(TwoStateModel::new(0.5, 0.05, 10)?),
        Box::new(MixtureModel::new([0.8, 0.2], 0.05, 10)?),
        Box::new(GaussianLocationModel::isotropic(vec![0.0, 0.0], 2.0)?),
    ];
    for (k, model) in models.iter().enumerate() {
        let mut rng = stream.child(k as u64).rng();
        let i_max = model.fisher_upper_bound().expect("bounded family");
        let mut worst_first: f64 = f64::NEG_INFINITY;
        let mut worst_second: f64 = f64::NEG_INFINITY;
        for i in 0..20 {
            let a = random_in_domain(model.as_ref(), &mut rng);
            let b = random_in_domain(model.as_ref(), &mut rng);
            let pair = stream.child(200 + 20 * k as u64 + i);
            worst_first = worst_first.max(dominance_excess(model.as_ref(), &a, &b, 4000, pair)?);
            // The segment average never exceeds the uniform bound, so compare
            // H² directly with the outer link of the chain.
            let h = hellinger_sq(model.as_ref(), &a, &b, 4000, pair.child(0))?;
            let mf = max_fi_divergence(&a, &b, &i_max)?;
            worst_second = worst_second.max(h.value - 0.25 * mf * mf - 3.0 * h.std_error);
        }
        s.push(
            "dominance_chain",
            worst_first <= 1e-12 && worst_second <= 1e-12,
            format!(
                "{}: max(H² − FI²/4 − 3SE) = {worst_first:.3e}, max(H² − maxFI²/4 − 3SE) = {worst_second:.3e} over 20 pairs",
                model.model_id()
            ),
        );
    }

    let mut rng = stream.child(7).rng();
    let mut worst: f64 = f64::NEG_INFINITY;
    for _ in 0..20 {
        let a: f64 = rng.random_range(0.05..0.95);
        let b: f64 = rng.random_range(0.05..0.95);
        let h = hellinger_sq_two_state(a, b, 10)?;
        worst = worst.max((a - b).abs() - h.value.sqrt() - 3.0 * h.std_error);
    }
    s.push("tv_lower_bound", worst <= 1e-12, format!("max(TV − H) over 20 two-state pairs = {worst:.3e}"));

    let quad_models: Vec<Box<dyn ModelSpec>> = vec![
        Box::new(TwoStateModel::new(0.5, 0.05, 10)?),
        Box::new(GaussianLocationModel::isotropic(vec![0.0, 0.0], 2.0)?),
        regression(NoiseKind::Gaussian { nu: 1.0 }, FeatureMap::Linear, 6)?,
        Box::new(SinGlmModel::new(2, 1.0, 6, vec![0.6, 0.48, 0.0, 0.64], 2.0)?),
    ];
    for (k, model) in quad_models.iter().enumerate() {
        let fisher_fn = model_fisher_fn(model.as_ref(), 200, stream.child(300 + k as u64));
        let a = model.true_param().to_vec();
        let b: Vec<f64> = a.iter().map(|v| v * 0.8 + 0.05).collect();
        let coarse = fi_divergence(&a, &b, &fisher_fn, 64)?.value;
        let fine = fi_divergence(&a, &b, &fisher_fn, 4096)?.value;
        let rel = (coarse - fine).abs() / fine;
        s.push("quadrature_convergence", rel <= 1e-6, format!("{}: n_quad 64 vs 4096 relative {rel:.2e}", model.model_id()));
    }

    let clamps = clamp_events() - clamps_before;
    s.push("no_clamping", clamps == 0, format!("{clamps} clamped estimates"));
    Ok(s)
}

fn markov_suite(stream: RngStream) -> Result<Suite> {
    let mut s = Suite::new("models_markov");
    let models: Vec<Box<dyn ModelSpec>> = vec![Box::new(TwoStateModel::new(0.5, 0.05, 10)?), Box::new(MixtureModel::new([0.8, 0.2], 0.05, 10)?)];
    for (k, model) in models.iter().enumerate() {
        let mut rng = stream.child(k as u64).rng();
        let mut worst: f64 = 0.0;
        for i in 0..10 {
            let th = random_in_domain(model.as_ref(), &mut rng);
            worst = worst.max(identity_z(model.as_ref(), &th, 4000, stream.child(10 + 10 * k as u64 + i))?.0);
        }
        s.push("information_identity", worst <= 3.0, format!("{}: largest deviation {worst:.2} SE over 10 parameters", model.model_id()));
        let n = if k == 0 { 100_000 } else { 20_000 };
        let (_, mean_z) = identity_z(model.as_ref(), model.true_param(), n, stream.child(50 + k as u64))?;
        s.push("score_mean_zero", mean_z <= 3.0, format!("{}: |mean score| = {mean_z:.2} SE over {n} paths", model.model_id()));
    }

    let grid = [0.1, 0.3, 0.5, 0.7, 0.9];
    let mut worst: f64 = 0.0;
    for horizon in 2..=6 {
        let model = TwoStateModel::new(0.5, 0.05, horizon)?;
        for &a in &grid {
            for &b in &grid {
                let mut bc = 0.0;
                for code in 0..(1u32 << horizon) {
                    let z = Trajectory::discrete((0..horizon).map(|k| 1 + ((code >> k) & 1)).collect());
                    bc += (0.5 * (model.loglik(&[a], &z) + model.loglik(&[b], &z))).exp();
                }
                worst = worst.max((hellinger_sq_two_state(a, b, horizon)?.value - 2.0 * (1.0 - bc)).abs());
            }
        }
    }
    s.push("tensorization", worst < 1e-12, format!("largest |tensorized − enumerated| = {worst:.2e}"));

    let mixture = MixtureModel::new([0.8, 0.2], 0.01, 3)?;
    let mut rng = stream.child(60).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let th = [rng.random::<f64>(), rng.random::<f64>()];
        for code in 0..8u32 {
            let path = [1 + (code & 1), 1 + ((code >> 1) & 1), 1 + ((code >> 2) & 1)];
            let p = mixture.loglik(&th, &Trajectory::discrete(path.to_vec())).exp();
            worst = worst.max((p - three_step_table(th, path)).abs());
        }
    }
    s.push("three_step_table", worst <= 1e-15, format!("largest |enumerated − table| over 20 parameters = {worst:.2e}"));

    let mixture = MixtureModel::new([0.8, 0.2], 0.05, 20)?;
    let mut worst: f64 = 0.0;
    for i in 0..50u64 {
        let z = mixture.sample(&[0.8, 0.2], &mut path_rng(stream.child(61), i));
        let th = [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)];
        worst = worst.max((mixture.loglik(&th, &z) - mixture.loglik(&[th[1], th[0]], &z)).abs());
    }
    s.push("permutation_invariance", worst <= 1e-12, format!("largest |ℓ(θ₀,θ₁) − ℓ(θ₁,θ₀)| = {worst:.2e}"));
    Ok(s)
}

fn dynamics_suite(stream: RngStream) -> Result<Suite> {
    let mut s = Suite::new("models_dynamics");
    let models: Vec<Box<dyn ModelSpec>> = vec![
        regression(NoiseKind::Gaussian { nu: 1.0 }, FeatureMap::Linear, 6)?,
        regression(NoiseKind::SmoothedLaplace { c: 5.0, nu: 1.0 }, FeatureMap::Linear, 6)?,
        regression(NoiseKind::BangBang { nu: 0.5 }, FeatureMap::Linear, 6)?,
        Box::new(SinGlmModel::new(2, 1.0, 6, vec![0.6, 0.48, 0.0, 0.64], 2.0)?),
        Box::new(AttentionModel::from_seed(5, 2, 1.0, 6, vec![0.5, -0.3, 0.2, 0.4], 7)?),
    ];
    let labels = ["regression/gaussian", "regression/smoothed_laplace", "regression/bang_bang", "sin_glm", "attention"];
    for (k, (model, label)) in models.iter().zip(labels).enumerate() {
        let (id, mean) = identity_z(model.as_ref(), model.true_param(), 4000, stream.child(k as u64))?;
        s.push("information_identity", id <= 3.0, format!("{label}: largest deviation {id:.2} SE"));
        s.push("score_mean_zero", mean <= 3.0, format!("{label}: |mean score| = {mean:.2} SE"));
    }

    let th = vec![0.5, -0.1, 0.2, 0.4];
    let model = RegressionModel::new(2, 50, th.clone(), make_noise(NoiseKind::Gaussian { nu: 1.0 })?, FeatureMap::Linear, 2.0)?;
    let data = simulate_dataset(&model, &th, 20, 70)?;
    let ols = least_squares(&model, &data)?;
    let mle = mle_continuous(&model, &data, &MleConfig { tol: 1e-12, ..MleConfig::default() })?;
    let gap = ols.iter().zip(mle.theta_hat.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    s.push("mle_equals_ols", gap <= 1e-8, format!("largest coordinate gap {gap:.2e}"));

    let mut rng = stream.child(20).rng();
    let mut ok = true;
    for _ in 0..20 {
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
        let c: f64 = rng.random_range(0.5..2.0);
        let mut full = x.clone();
        full.push(0.0);
        let naive = |v: &[f64]| {
            let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = v.iter().map(|a| (a - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|a| a / z).collect::<Vec<f64>>()
        };
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-14);
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let full_shifted: Vec<f64> = full.iter().map(|v| v + c).collect();
        ok &= close(&pinned_softmax(&x), &naive(&full));
        ok &= close(&naive(&full_shifted), &naive(&full));
        ok &= !close(&pinned_softmax(&shifted), &pinned_softmax(&x));
    }
    s.push(
        "pinned_softmax_shift",
        ok,
        "pinned softmax matches the K-logit softmax, which ignores a common shift, while shifting the K−1 free logits changes the law".into(),
    );

    for (k, model) in models.iter().enumerate().skip(2) {
        let mut rng = stream.child(30 + k as u64).rng();
        let mut worst: f64 = f64::NEG_INFINITY;
        for i in 0..5 {
            let a = model.true_param().to_vec();
            let b = toward(&a, &random_in_domain(model.as_ref(), &mut rng), 0.3);
            worst = worst.max(dominance_excess(model.as_ref(), &a, &b, 8000, stream.child(50 + 10 * k as u64 + i))?);
        }
        s.push("dominance", worst <= 0.0, format!("{}: max(H² − FI²/4 − 3SE) = {worst:.3e} over 5 pairs", labels[k]));
    }

    for (map, label) in [(FeatureMap::Linear, "linear"), (FeatureMap::BoundedSin, "bounded_sin")] {
        let model = RegressionModel::new(2, 20, vec![0.5, -0.1, 0.2, 0.4], make_noise(NoiseKind::Gaussian { nu: 1.0 })?, map, 2.0)?;
        let (m1, m2) = feature_moments(&model, model.true_param(), 4000, stream.child(60));
        s.push(
            "feature_moments",
            m1.is_finite() && m2.is_finite() && m1 <= m2 + 1e-12,
            format!("{label}: M₁ = {m1:.4} ≤ M₂ = {m2:.4}"),
        );
    }
    Ok(s)
}

fn estimation_suite(stream: RngStream) -> Result<Suite> {
    let mut s = Suite::new("estimation");
    let mut rng = stream.child(0).rng();
    let mut worst: f64 = f64::NEG_INFINITY;
    for i in 0..100u64 {
        let theta: f64 = rng.random_range(0.1..0.9);
        let model = TwoStateModel::new(theta, 0.05, 16)?;
        let data = simulate_dataset(&model, &[theta], 16, 1000 + i)?;
        let eps = 0.05 / (2.0 * (2.0 * 16.0f64).sqrt());
        let cover = build_cover(model.domain(), &model.fisher_upper_bound().expect("two-state bound"), eps)?;
        let disc = mle_discretized(&model, &data, &cover)?;
        let cont = mle_continuous(&model, &data, &MleConfig::default())?;
        worst = worst.max((disc.theta_hat[0] - cont.theta_hat[0]).abs() - cover.steps[0] / 2.0 - 1e-8);
    }
    s.push(
        "discretized_vs_continuous",
        worst <= 0.0,
        format!("max(|θ̂_disc − θ̂_cont| − h/2 − 1e-8) over 100 datasets = {worst:.3e}"),
    );

    let mut ok = true;
    for (k, model) in desk_models()?.iter().enumerate() {
        let data = simulate_dataset(model.as_ref(), model.true_param(), 32, 2000 + k as u64)?;
        let cfg = MleConfig::default();
        let fit = mle_continuous(model.as_ref(), &data, &cfg)?;
        ok &= !fit.converged || fit.grad_norm <= cfg.tol;
    }
    s.push("first_order_optimality", ok, "every converged fit has projected gradient ≤ tol".into());

    let model = SinGlmModel::new(2, 1.0, 8, vec![0.6, 0.48, 0.0, 0.64], 2.0)?;
    let data = simulate_dataset(&model, model.true_param(), 32, 3000)?;
    let cfg = MleConfig { seed: 5, ..MleConfig::default() };
    let fit_with = |threads: usize| -> Result<Vec<f64>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        pool.install(|| mle_continuous(&model, &data, &cfg)).map(|f| f.theta_hat.into_inner())
    };
    let one = fit_with(1)?;
    let many = fit_with(4)?;
    let same = one.iter().zip(&many).all(|(a, b)| a.to_bits() == b.to_bits());
    s.push("multistart_determinism", same, "1 and 4 worker threads give bit-identical estimates".into());

    let model = TwoStateModel::new(0.5, 0.05, 5)?;
    let stay = TrajectoryDataset::new("two_state", 5, 0, vec![Trajectory::discrete(vec![1, 1, 1, 1, 1]); 3])?;
    let switch = TrajectoryDataset::new("two_state", 5, 0, vec![Trajectory::discrete(vec![1, 2, 1, 2, 1]); 3])?;
    let hi = mle_continuous(&model, &stay, &MleConfig::default())?.theta_hat[0];
    let lo = mle_continuous(&model, &switch, &MleConfig::default())?.theta_hat[0];
    s.push(
        "monotone_data",
        (hi - 0.95).abs() <= 1e-12 && (lo - 0.05).abs() <= 1e-12,
        format!("all-stay → {hi}, all-switch → {lo}"),
    );
    let _ = stream;
    Ok(s)
}

fn lipschitz_check<F>(model: &dyn ModelSpec, a: &[f64], b: &[f64], n: usize, stream: RngStream, infos: F) -> Result<(f64, f64)>
where
    F: Fn(&[f64], &Trajectory) -> Vec<DMatrix<f64>>,
{
    let p = a.len();
    let dist = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let paths_a: Vec<Trajectory> = (0..n as u64).map(|i| model.sample(a, &mut path_rng(stream.child(0), i))).collect();
    let paths_b: Vec<Trajectory> = (0..n as u64).map(|i| model.sample(b, &mut path_rng(stream.child(1), i))).collect();
    let total = |th: &[f64], paths: &[Trajectory]| {
        let sums: Vec<DMatrix<f64>> = paths.iter().map(|z| infos(th, z).into_iter().fold(DMatrix::zeros(p, p), |acc, m| acc + m)).collect();
        let mean = sums.iter().fold(DMatrix::zeros(p, p), |acc, m| acc + m) / n as f64;
        let var = sums.iter().fold(DMatrix::zeros(p, p), |acc, m| acc + (m - &mean).map(|v| v * v)) / (n as f64 - 1.0);
        (mean, var / n as f64)
    };
    let (ia, va) = total(a, &paths_a);
    let (ib, vb) = total(b, &paths_b);
    let diff = &ia - &ib;
    let lhs = op_norm(&diff);
    let se = (va.sum() + vb.sum()).sqrt();

    let steps = infos(a, &paths_a[0]).len();
    let mut lip: f64 = 0.0;
    let mut moment: f64 = 0.0;
    let dirs = probe_directions(p, 16, stream.child(2));
    for (x, y, paths) in [(a, b, &paths_a), (b, a, &paths_b)] {
        let mut lip_t = vec![0.0; steps];
        let mut sq = vec![vec![0.0; steps]; dirs.len()];
        for z in paths {
            let ix = infos(x, z);
            let iy = infos(y, z);
            for t in 0..steps {
                lip_t[t] += op_norm(&(&ix[t] - &iy[t])) / dist;
                for (k, v) in dirs.iter().enumerate() {
                    sq[k][t] += (v.transpose() * &iy[t] * v)[(0, 0)].powi(2);
                }
            }
        }
        lip = lip.max(lip_t.iter().cloned().fold(0.0, f64::max) / n as f64);
        moment = moment.max(sq.iter().flatten().cloned().fold(0.0, f64::max) / n as f64);
    }
    let h = hellinger_sq(model, a, b, n, stream.child(3))?;
    let rhs = model.horizon() as f64 * (lip * dist + 2.0 * 2f64.sqrt() * moment.sqrt() * (h.value + 3.0 * h.std_error).max(0.0).sqrt());
    Ok((lhs - 3.0 * se, rhs))
}

fn localization_suite(stream: RngStream) -> Result<Suite> {
    let mut s = Suite::new("localization");
    let glm = SinGlmModel::new(2, 1.0, 6, vec![0.6, 0.48, 0.0, 0.64], 2.0)?;
    let a = glm.true_param().to_vec();
    let b = vec![0.7, 0.4, 0.1, 0.6];
    let small = MomentConfig {
        n_dirs: 8,
        n_mc: 2000,
        n_s: 5,
        n_fisher_mc: 2000,
        force_mc: true,
    };
    let large = MomentConfig { n_dirs: 64, ..small.clone() };
    let (b1s, b2s) = estimate_moments(&glm, &a, &b, &small, stream.child(0))?;
    let (b1l, b2l) = estimate_moments(&glm, &a, &b, &large, stream.child(0))?;
    s.push(
        "direction_monotonicity",
        b1l.value >= b1s.value && b2l.value >= b2s.value,
        format!("B₁: {:.4} → {:.4}, B₂: {:.4} → {:.4} going from 8 to 64 directions", b1s.value, b1l.value, b2s.value, b2l.value),
    );

    let mut rng = stream.child(1).rng();
    let mut checked = 0;
    let mut ok = true;
    for _ in 0..30 {
        let star: f64 = rng.random_range(0.2..0.8);
        let hat = (star + rng.random_range(-0.15..0.15)).clamp(0.05, 0.95);
        let model = TwoStateModel::new(star, 0.05, 20)?;
        let fisher_fn = model_fisher_fn(&model, 0, stream.child(2));
        let (_, fi_ok) = check_fi_radius(&[star], &[hat], &fisher_fn, 17)?;
        if fi_ok && hat != star {
            checked += 1;
            let i2 = i2_matrix(&[star], &[hat], &fisher_fn, 64)?.entries()[(0, 0)];
            let is = fisher_fn(&[star])?.entries()[(0, 0)];
            ok &= (0.5 * is..=1.5 * is).contains(&i2);
        }
    }
    s.push("i2_sandwich", ok, format!("½I(θ*) ≼ I₂ ≼ (3/2)I(θ*) on all {checked} pairs passing the FI-radius check"));

    let attention = AttentionModel::from_seed(5, 2, 1.0, 6, vec![0.5, -0.3, 0.2, 0.4], 7)?;
    for (k, (model, label)) in [(&glm as &dyn ModelSpec, "sin_glm"), (&attention as &dyn ModelSpec, "attention")].into_iter().enumerate() {
        let mut rng = stream.child(10 + k as u64).rng();
        let mut worst: f64 = f64::NEG_INFINITY;
        for i in 0..5u64 {
            let x = random_in_domain(model, &mut rng);
            let y = toward(&x, &random_in_domain(model, &mut rng), 0.5);
            let (lhs, rhs) = if k == 0 {
                lipschitz_check(model, &x, &y, 1000, stream.child(20 + 10 * k as u64 + i), |th, z| {
                    (0..z.len() - 1).map(|t| glm.conditional_fisher(th, z.state(t))).collect()
                })?
            } else {
                lipschitz_check(model, &x, &y, 1000, stream.child(20 + 10 * k as u64 + i), |th, z| {
                    let toks = z.tokens().expect("token path");
                    (2..toks.len()).map(|t| attention.conditional_fisher(th, &toks[..t]).expect("valid context")).collect()
                })?
            };
            worst = worst.max(lhs - rhs);
        }
        s.push("fi_lipschitz", worst <= 0.0, format!("{label}: max(‖ΔI‖ − 3SE − bound) = {worst:.3e} over 5 pairs"));
    }

    let cases: Vec<(Box<dyn ModelSpec>, Vec<f64>, usize)> = vec![
        (Box::new(TwoStateModel::new(0.5, 0.05, 10)?), vec![0.51], 10_000),
        (Box::new(MixtureModel::new([0.8, 0.2], 0.05, 10)?), vec![0.81, 0.21], 10_000),
        (regression(NoiseKind::Gaussian { nu: 1.0 }, FeatureMap::Linear, 5)?, vec![0.51, -0.09, 0.21, 0.41], 200_000),
        (Box::new(SinGlmModel::new(2, 1.0, 5, vec![0.6, 0.48, 0.0, 0.64], 2.0)?), vec![0.61, 0.49, 0.01, 0.65], 200_000),
        (Box::new(AttentionModel::from_seed(5, 2, 1.0, 5, vec![0.5, -0.3, 0.2, 0.4], 7)?), vec![0.53, -0.27, 0.23, 0.43], 200_000),
    ];
    let light = MomentConfig {
        n_dirs: 16,
        n_mc: 4000,
        n_s: 5,
        n_fisher_mc: 4000,
        force_mc: false,
    };
    for (k, (model, b, n)) in cases.iter().enumerate() {
        let a = model.true_param();
        let st = stream.child(40 + k as u64);
        let h = hellinger_sq(model.as_ref(), a, b, *n, st.child(0))?;
        let fisher_fn = model_fisher_fn(model.as_ref(), 4000, st.child(1));
        let delta: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
        let norm_sq = i2_matrix(a, b, &fisher_fn, 16)?.quad_form(&delta);
        let (b1, b2) = estimate_moments(model.as_ref(), a, b, &light, st.child(2))?;
        let mut sup: f64 = 0.0;
        for (j, frac) in [0.25, 0.5, 0.75, 1.0].into_iter().enumerate() {
            let hs = hellinger_sq(model.as_ref(), a, &toward(a, b, frac), *n / 10, st.child(3 + j as u64))?;
            sup = sup.max(hs.value);
        }
        let radius_ok = check_radius(sup.sqrt(), b1.value, b2.value);
        let ratio = h.value / norm_sq;
        let se = h.std_error / norm_sq;
        let band = ratio + 3.0 * se >= 3.0 / 16.0 && ratio - 3.0 * se <= 5.0 / 16.0;
        s.push(
            "local_quadratic",
            !radius_ok || band,
            format!("{}: ratio {ratio:.4} ± {se:.4}, radius predicate {radius_ok}", model.model_id()),
        );
    }
    Ok(s)
}

fn harness_suite(seed: u64) -> Result<Suite> {
    let mut s = Suite::new("harness");
    let cfg = ModelConfig::TwoState(TwoStateConfig {
        theta_star: 0.7,
        mu: 0.05,
        horizon: 8,
    });
    let grid = [(8, 8), (16, 8), (8, 16)];
    let opts = ScalingOptions::default();
    let run_with = |threads: usize| -> Result<crate::harness::ScalingRun> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        pool.install(|| run_scaling(&cfg, &grid, 8, seed, &opts))
    };
    let one = run_with(1)?;
    let many = run_with(4)?;
    s.push(
        "reproducibility",
        records_to_csv(&one.records) == records_to_csv(&many.records),
        "CSV bytes identical at 1 and 4 worker threads".into(),
    );

    let mut ok = true;
    for r in &one.records {
        let fbar = 1.0 / (0.7 * 0.3) * (r.horizon - 1) as f64 / r.horizon as f64;
        ok &= (r.mean_weighted_err - fbar * r.mean_sq_err).abs() <= 1e-12 * r.mean_weighted_err.max(1e-300);
    }
    s.push("weighted_error", ok, "weighted error equals Ī(θ*)·squared error for the scalar two-state family".into());

    let logged = one.predicates.len() == grid.len() && one.predicates.iter().all(|p| p.n_checked == opts.predicate_subsample.min(8));
    s.push("predicate_rates", logged, format!("{} cells report predicate pass rates", one.predicates.len()));
    Ok(s)
}

fn cli_suite() -> Result<Suite> {
    let mut s = Suite::new("cli");
    let good = "model:\n  two_state:\n    theta_star: 0.7\n    T: 8\nexperiment:\n  n_reps: 4\nseed: 1\n";
    s.push("valid_config", RunConfig::parse(good).is_ok(), "well-formed config parses".into());
    let typo = good.replace("theta_star", "theta_str");
    s.push("misspelled_key", matches!(RunConfig::parse(&typo), Err(Error::Config { .. })), "misspelled key is rejected".into());
    let missing = good.replace("    T: 8\n", "");
    s.push("missing_key", matches!(RunConfig::parse(&missing), Err(Error::Config { .. })), "missing required key is rejected".into());
    let unknown_top = format!("{good}extra: 1\n");
    s.push("unknown_section", matches!(RunConfig::parse(&unknown_top), Err(Error::Config { .. })), "unknown top-level key is rejected".into());
    Ok(s)
}
