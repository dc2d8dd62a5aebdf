//! End-to-end acceptance checks, one block per criterion.
//!
//! Run with `cargo test -p helloc-core --release --test acceptance`. Extra
//! arguments select criteria by number, e.g. `-- 1 3`.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use helloc_core::attention::{min_eig_reduced_cov, AttentionModel};
use helloc_core::config::{
    AttentionConfig, FeatureMapName, InitialLaw, MixtureConfig, ModelConfig, NoiseConfig, NoiseKindName, RegressionConfig,
    SinGlmConfig, TwoStateConfig,
};
use helloc_core::divergences::{hellinger_sq_gaussian, hellinger_sq_mc, hellinger_sq_two_state};
use helloc_core::estimation::{mle_continuous, MleConfig};
use helloc_core::gaussian::GaussianLocationModel;
use helloc_core::harness::{baseline_iid, fit_loglog, fit_slope, run_scaling, ScalingOptions, SlopeAxis};
use helloc_core::localization::{full_report, verify_local_quadratic, LocalizationConfig};
use helloc_core::markov::{
    alpha_mixing_witness, fisher_two_state, posterior_collapse_rate, MixtureModel, TwoStateModel,
};
use helloc_core::model::{information_mc, simulate_dataset};
use helloc_core::noise::{make_noise, NoiseKind};
use helloc_core::regression::{least_squares, FeatureMap, RegressionModel};
use helloc_core::sin_glm::{cos_anticoncentration_check, sin_glm_lambda_max, SinGlmModel};
use helloc_core::{derive_stream, ModelSpec, Trajectory};

struct Tally {
    failed: Vec<String>,
}

impl Tally {
    fn check(&mut self, id: &str, pass: bool, detail: impl AsRef<str>) -> bool {
        println!("{} {id}: {}", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
        if !pass {
            self.failed.push(id.to_string());
        }
        pass
    }

    fn info(&self, id: &str, detail: impl AsRef<str>) {
        println!("INFO {id}: {}", detail.as_ref());
    }
}

fn two_state_cfg(theta: f64, horizon: usize) -> ModelConfig {
    ModelConfig::TwoState(TwoStateConfig {
        theta_star: theta,
        mu: 0.05,
        horizon,
    })
}

fn grid(ms: &[usize], ts: &[usize]) -> Vec<(usize, usize)> {
    ts.iter().flat_map(|&t| ms.iter().map(move |&m| (m, t))).collect()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Largest relative error of the score against central differences of the
/// log-likelihood and of the Hessian against central differences of the score.
fn finite_difference_error(model: &dyn ModelSpec, theta: &[f64], traj: &Trajectory) -> (f64, f64) {
    let p = theta.len();
    let h = 1e-5;
    let score = model.score(theta, traj);
    let hess = model.hessian(theta, traj);
    let mut fd_score = DVector::zeros(p);
    let mut fd_hess = DMatrix::zeros(p, p);
    for j in 0..p {
        let mut up = theta.to_vec();
        let mut dn = theta.to_vec();
        up[j] += h;
        dn[j] -= h;
        fd_score[j] = (model.loglik(&up, traj) - model.loglik(&dn, traj)) / (2.0 * h);
        let col = (model.score(&up, traj) - model.score(&dn, traj)) / (2.0 * h);
        fd_hess.set_column(j, &col);
    }
    let rel = |d: f64, s: f64| d / s.max(1.0);
    (
        rel((&fd_score - &score).norm(), score.norm()),
        rel((&fd_hess - &hess).norm(), hess.norm()),
    )
}

fn criterion_1(t: &mut Tally) {
    let start = Instant::now();
    let cfg = two_state_cfg(0.7, 8);
    let g = grid(&[8, 32, 128], &[8, 32, 128]);
    let run = run_scaling(&cfg, &g, 64, 1, &ScalingOptions::default()).expect("two-state scaling");
    let elapsed = start.elapsed().as_secs_f64();
    let xs: Vec<f64> = run.records.iter().map(|r| (r.m * r.horizon) as f64).collect();
    let ys: Vec<f64> = run.records.iter().map(|r| r.mean_sq_err).collect();
    let fit = fit_loglog(&xs, &ys, SlopeAxis::MT).unwrap();
    t.check("1.slope", (fit.slope + 1.0).abs() <= 0.15, format!("slope of mean squared error vs mT = {:.4}", fit.slope));
    let var = 0.7 * 0.3;
    let norm: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| x * y / var).collect();
    let lo = norm.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = norm.iter().cloned().fold(0.0, f64::max);
    t.check("1.normalized", lo >= 0.5 && hi <= 5.0, format!("mT·err/σ² ranges over [{lo:.3}, {hi:.3}]"));
    let trend = fit_loglog(&xs, &norm, SlopeAxis::MT).unwrap();
    t.check("1.no_trend", trend.slope.abs() <= 0.15, format!("slope of mT·err/σ² vs mT = {:.4}", trend.slope));
    t.check("1.runtime", elapsed < 60.0, format!("{elapsed:.1} s"));
}

/// Compares the two MC sides of the information identity, and each against
/// the analytic matrix when one exists, on the upper triangle.
fn identity_agrees(model: &dyn ModelSpec, theta: &[f64], n: usize, seed: u64) -> (bool, String) {
    let est = information_mc(model, theta, n, derive_stream(seed, 0x1D)).expect("information estimate");
    let exact = model.fisher_exact(theta);
    let p = theta.len();
    let mut worst: f64 = 0.0;
    for i in 0..p {
        for j in i..p {
            // Some entries agree path by path, leaving only roundoff in both.
            let floor = 1e-12 * (est.outer[(i, j)].abs() + est.neg_hessian[(i, j)].abs());
            let z = (est.outer[(i, j)] - est.neg_hessian[(i, j)]).abs() / est.diff_se[(i, j)].max(floor).max(f64::MIN_POSITIVE);
            worst = worst.max(z);
            if let Some(f) = &exact {
                let e = f.entries()[(i, j)];
                worst = worst.max((est.outer[(i, j)] - e).abs() / est.outer_se[(i, j)].max(1e-300));
                worst = worst.max((est.neg_hessian[(i, j)] - e).abs() / est.neg_hessian_se[(i, j)].max(1e-300));
            }
        }
    }
    let tag = if exact.is_some() { "MC outer, MC Hessian, analytic" } else { "MC outer, MC Hessian" };
    (worst <= 3.0, format!("θ={theta:?}: largest deviation {worst:.2} SE ({tag})"))
}

/// Family name, model, and the parameters to test it at.
type Probe = (&'static str, Box<dyn ModelSpec>, Vec<Vec<f64>>);

fn criterion_2(t: &mut Tally) {
    let start = Instant::now();
    let n = 10_000;
    let mut models: Vec<Probe> = Vec::new();
    models.push((
        "two_state",
        Box::new(TwoStateModel::new(0.5, 0.05, 20).unwrap()),
        vec![vec![0.3], vec![0.5], vec![0.8]],
    ));
    models.push((
        "mixture",
        Box::new(MixtureModel::new([0.8, 0.2], 0.05, 20).unwrap()),
        vec![vec![0.8, 0.2], vec![0.7, 0.4], vec![0.9, 0.3]],
    ));
    let kinds = [
        NoiseKind::Gaussian { nu: 1.0 },
        NoiseKind::SmoothedLaplace { c: 5.0, nu: 1.0 },
        NoiseKind::BangBang { nu: 0.5 },
    ];
    let reg_points = [vec![0.5, -0.1, 0.2, 0.4], vec![0.3, 0.0, 0.0, 0.3], vec![-0.4, 0.2, 0.1, 0.6]];
    for (kind, th) in kinds.iter().zip(&reg_points) {
        let model = RegressionModel::new(2, 10, th.clone(), make_noise(*kind).unwrap(), FeatureMap::Linear, 2.0).unwrap();
        models.push(("regression", Box::new(model), vec![th.clone()]));
    }
    models.push((
        "sin_glm",
        Box::new(SinGlmModel::new(2, 1.0, 10, vec![0.6, 0.48, 0.0, 0.64], 2.0).unwrap()),
        vec![vec![0.6, 0.48, 0.0, 0.64], vec![-0.5, 0.2, 0.9, 0.1], vec![1.0, 0.0, 0.0, 1.0]],
    ));
    models.push((
        "attention",
        Box::new(AttentionModel::from_seed(5, 2, 1.0, 8, vec![0.0; 4], 7).unwrap()),
        vec![vec![0.5, -0.3, 0.2, 0.4], vec![0.0, 0.0, 0.0, 0.0], vec![-0.6, 0.0, 0.5, -0.4]],
    ));
    for (k, (name, model, points)) in models.iter().enumerate() {
        for (i, th) in points.iter().enumerate() {
            let (ok, detail) = identity_agrees(model.as_ref(), th, n, 2000 + 10 * k as u64 + i as u64);
            t.check(&format!("2.{name}"), ok, detail);
        }
    }
    let i = fisher_two_state(0.5, 101).unwrap().entries()[(0, 0)];
    t.check("2.two_state_exact", i == 400.0, format!("I(0.5, T=101) = {i}"));
    let elapsed = start.elapsed().as_secs_f64();
    t.check("2.runtime", elapsed < 120.0, format!("{elapsed:.1} s"));
}

fn two_state_enumerated(theta0: f64, theta1: f64, horizon: usize) -> f64 {
    let model = TwoStateModel::new(0.5, 0.05, horizon).unwrap();
    let mut bc = 0.0;
    for code in 0..(1u32 << horizon) {
        let path: Vec<u32> = (0..horizon).map(|k| 1 + ((code >> k) & 1)).collect();
        let z = Trajectory::discrete(path);
        bc += (0.5 * (model.loglik(&[theta0], &z) + model.loglik(&[theta1], &z))).exp();
    }
    2.0 * (1.0 - bc)
}

fn criterion_3(t: &mut Tally) {
    for (k, d) in [1usize, 2, 5].into_iter().enumerate() {
        let model = GaussianLocationModel::isotropic(vec![0.0; d], 3.0).unwrap();
        let th1 = vec![1.0 / (d as f64).sqrt(); d];
        let eye = DMatrix::identity(d, d);
        let exact = hellinger_sq_gaussian(&vec![0.0; d], &eye, &th1, &eye).unwrap().value;
        let mc = hellinger_sq_mc(&model, &vec![0.0; d], &th1, 1_000_000, derive_stream(30 + k as u64, 0)).unwrap();
        let rel = (mc.value - exact).abs() / exact;
        t.check(
            "3.gaussian",
            rel <= 0.02,
            format!("d={d}: MC {:.6} ± {:.6} vs closed form {exact:.7} (relative {rel:.2e})", mc.value, mc.std_error),
        );
    }
    let model = TwoStateModel::new(0.2, 0.05, 3).unwrap();
    let tens = hellinger_sq_two_state(0.2, 0.8, 3).unwrap().value;
    let mc = hellinger_sq_mc(&model, &[0.2], &[0.8], 1_000_000, derive_stream(33, 0)).unwrap();
    let z = (mc.value - tens).abs() / mc.std_error;
    t.check(
        "3.two_state_mc",
        z <= 3.0,
        format!("(0.2, 0.8, T=3): MC {:.5} ± {:.5} vs tensorized {tens:.5} ({z:.2} SE)", mc.value, mc.std_error),
    );
    let enumerated = two_state_enumerated(0.2, 0.8, 3);
    let z64 = (mc.value - 0.64).abs() / mc.std_error;
    t.info(
        "3.two_state_literal",
        format!(
            "literal 0.64 sits {z64:.0} SE from the MC estimate; enumeration over all 8 paths gives {enumerated:.12}, so the target here is the tensorized value"
        ),
    );
    let grid = [0.1, 0.3, 0.5, 0.7, 0.9];
    let mut worst: f64 = 0.0;
    for horizon in 2..=6 {
        for &a in &grid {
            for &b in &grid {
                let tens = hellinger_sq_two_state(a, b, horizon).unwrap().value;
                worst = worst.max((tens - two_state_enumerated(a, b, horizon)).abs());
            }
        }
    }
    t.check("3.enumeration", worst <= 1e-12, format!("largest |tensorized − enumerated| over 2 ≤ T ≤ 6, 5×5 grid = {worst:.2e}"));
}

fn criterion_4(t: &mut Tally) {
    for horizon in [2usize, 10, 50] {
        let model = TwoStateModel::new(0.5, 0.05, horizon).unwrap();
        let mut ratios = Vec::new();
        for delta in [-0.02, -0.01, -0.005, 0.005, 0.01, 0.02] {
            let q = verify_local_quadratic(&model, &[0.5], &[0.5 + delta], 10_000, derive_stream(40, horizon as u64)).unwrap();
            ratios.push(q.ratio);
        }
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().cloned().fold(0.0, f64::max);
        t.check(
            "4.band",
            lo >= 3.0 / 16.0 && hi <= 5.0 / 16.0,
            format!("T={horizon}, |Δ| ≤ 0.02: ratio in [{lo:.6}, {hi:.6}]"),
        );
        let q = verify_local_quadratic(&model, &[0.5], &[0.501], 10_000, derive_stream(41, horizon as u64)).unwrap();
        t.check(
            "4.small_step",
            (q.ratio - 0.25).abs() <= 0.0025,
            format!("T={horizon}, |Δ| = 1e-3: ratio {:.7}", q.ratio),
        );
    }
}

fn criterion_5(t: &mut Tally) {
    let model = TwoStateModel::new(0.7, 0.05, 100).unwrap();
    let mut both = 0;
    let mut sandwich_ok = true;
    let mut lines = Vec::new();
    for seed in 0..20u64 {
        let data = simulate_dataset(&model, &[0.7], 500, seed).unwrap();
        let cfg = LocalizationConfig {
            seed,
            ..LocalizationConfig::default()
        };
        let rep = full_report(&model, &data, &[0.7], &cfg).expect("localization report");
        if rep.in_regime() {
            both += 1;
            if rep.sandwich != Some(true) {
                sandwich_ok = false;
            }
        }
        lines.push(format!(
            "seed {seed}: θ̂={:.5} H={:.5} threshold={:.5} radius={} fi_radius={} sandwich={:?}",
            rep.theta_hat[0],
            rep.hellinger_sup.value.sqrt(),
            rep.radius_threshold,
            rep.radius_ok,
            rep.fi_radius_ok,
            rep.sandwich
        ));
    }
    for l in &lines {
        t.info("5.run", l);
    }
    t.check("5.predicates", both >= 18, format!("both predicates pass in {both}/20 runs"));
    t.check("5.sandwich", sandwich_ok, format!("sandwich holds in every run where both predicates pass ({both} runs)"));
}

fn criterion_6(t: &mut Tally) {
    let model = MixtureModel::new([0.8, 0.2], 0.05, 200).unwrap();
    let (c0, c1) = posterior_collapse_rate(&model, 0.01, 1000, derive_stream(60, 0)).unwrap();
    t.check("6.collapse", c0 >= 0.95 && c1 >= 0.95, format!("collapse fractions {c0:.3}, {c1:.3}"));

    let est = information_mc(&model, &[0.8, 0.2], 10_000, derive_stream(61, 0)).unwrap();
    let d0 = fisher_two_state(0.8, 200).unwrap().entries()[(0, 0)];
    let d1 = fisher_two_state(0.2, 200).unwrap().entries()[(0, 0)];
    let scale = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0 / d0.sqrt(), 1.0 / d1.sqrt()]));
    let w = &scale * &est.outer * &scale;
    let eig = nalgebra::SymmetricEigen::new((&w + w.transpose()) * 0.5).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    t.check("6.sandwich", lo >= 0.2 && hi <= 0.8, format!("eigenvalues of D^(-1/2) I D^(-1/2) in [{lo:.4}, {hi:.4}]"));

    let wit = alpha_mixing_witness([0.9, 0.1], 50, 1_000_000, derive_stream(62, 0)).unwrap();
    let (k, dep, se) = wit.estimates[49];
    let z = (dep - wit.asymptote).abs() / se;
    t.check(
        "6.alpha_witness",
        z <= 3.0,
        format!("k={k}: dependence {dep:.5} ± {se:.5} vs asymptote {:.5} ({z:.2} SE)", wit.asymptote),
    );

    let start = Instant::now();
    let cfg = ModelConfig::Mixture(MixtureConfig {
        theta_star: [0.8, 0.2],
        mu: 0.05,
        horizon: 64,
    });
    let run = run_scaling(&cfg, &grid(&[64, 256, 1024], &[64]), 16, 6, &ScalingOptions::default()).expect("mixture scaling");
    let fit = fit_slope(&run.records, SlopeAxis::MT).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    t.check("6.scaling", (fit.slope + 1.0).abs() <= 0.2, format!("slope vs mT = {:.4}", fit.slope));
    t.check("6.runtime", elapsed < 600.0, format!("{elapsed:.1} s"));
}

fn criterion_7(t: &mut Tally) {
    let th = vec![0.5, -0.1, 0.2, 0.4];
    let model = RegressionModel::new(2, 50, th.clone(), make_noise(NoiseKind::Gaussian { nu: 1.0 }).unwrap(), FeatureMap::Linear, 2.0).unwrap();
    let data = simulate_dataset(&model, &th, 20, 70).unwrap();
    let ols = least_squares(&model, &data).unwrap();
    let mle = mle_continuous(&model, &data, &MleConfig { tol: 1e-12, ..MleConfig::default() }).unwrap();
    let gap = sub(&ols, &mle.theta_hat).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    t.check("7.ols", gap <= 1e-8, format!("largest |MLE − OLS| coordinate = {gap:.2e}"));

    for kind in [
        NoiseKind::Gaussian { nu: 1.0 },
        NoiseKind::BangBang { nu: 0.5 },
        NoiseKind::SmoothedLaplace { c: 5.0, nu: 1.0 },
    ] {
        let fam = make_noise(kind).unwrap();
        let rep = fam.regularity_report(1e-6);
        let failed: Vec<&str> = rep.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
        t.check("7.regularity", rep.all_passed(), format!("{kind:?}: failed checks {failed:?}"));
    }
    let gauss = make_noise(NoiseKind::Gaussian { nu: 1.0 }).unwrap();
    let rep = gauss.regularity_report(1e-6);
    let d = rep.get("d_curvature").map(|c| c.measured).unwrap_or(f64::NAN);
    let e = rep.get("e_eighth_moment").map(|c| c.measured).unwrap_or(f64::NAN);
    t.check(
        "7.gaussian_moments",
        gauss.beta1() == 1.0 && gauss.beta2() == 105.0 && (d - 1.0).abs() < 1e-6 && (e - 105.0).abs() < 1e-4,
        format!("constants ({}, {}), measured ({d:.8}, {e:.6})", gauss.beta1(), gauss.beta2()),
    );

    let cfg = ModelConfig::Regression(RegressionConfig {
        d: 2,
        horizon: 16,
        theta_star: th,
        noise: NoiseConfig {
            kind: NoiseKindName::SmoothedLaplace,
            nu: 1.0,
            c: Some(5.0),
        },
        feature_map: FeatureMapName::Linear,
        radius: 2.0,
    });
    let run = run_scaling(&cfg, &grid(&[16, 64, 256], &[16, 64]), 16, 7, &ScalingOptions::default()).expect("regression scaling");
    let fit = fit_slope(&run.records, SlopeAxis::MT).unwrap();
    t.check("7.scaling", (fit.slope + 1.0).abs() <= 0.2, format!("smoothed Laplace slope vs mT = {:.4}", fit.slope));
}

fn criterion_8(t: &mut Tally) {
    let th = vec![0.6, 0.48, 0.0, 0.64];
    let model = SinGlmModel::new(2, 1.0, 10, th.clone(), 2.0).unwrap();
    let data = simulate_dataset(&model, &th, 5, 80).unwrap();
    let mut worst = (0.0f64, 0.0f64);
    for (z, eval) in data.trajectories.iter().zip([th.clone(), vec![-0.5, 0.2, 0.9, 0.1], vec![1.0, 0.0, 0.0, 1.0]].iter().cycle()) {
        let (s, h) = finite_difference_error(&model, eval, z);
        worst = (worst.0.max(s), worst.1.max(h));
    }
    t.check(
        "8.finite_difference",
        worst.0 < 1e-5 && worst.1 < 1e-5,
        format!("relative errors: score {:.2e}, Hessian {:.2e}", worst.0, worst.1),
    );

    let mut k = 0;
    for sigma in [0.5, 1.0, 10.0] {
        for (a, tt) in [(0.0, 0.1), (0.7, 0.3), (1.5, 0.6)] {
            let c = cos_anticoncentration_check(sigma, a, tt, 100_000, derive_stream(81, k)).unwrap();
            k += 1;
            t.check(
                "8.anticoncentration",
                c.holds,
                format!("σ={sigma}, a={a}, t={tt}: P̂ = {:.5} ± {:.5} ≤ {:.5}", c.p_hat, c.std_error, c.bound),
            );
        }
    }

    let (lmax, bound) = sin_glm_lambda_max(&model, &th, 10_000, derive_stream(82, 0)).unwrap();
    t.check("8.lambda_max", lmax <= bound, format!("λ_max(I_MC) = {lmax:.4} ≤ {bound:.4}"));

    let cfg = ModelConfig::SinGlm(SinGlmConfig {
        d: 2,
        sigma: 1.0,
        horizon: 16,
        theta_star: th,
        radius: 2.0,
    });
    let run = run_scaling(&cfg, &grid(&[32, 128, 512], &[16, 64]), 16, 8, &ScalingOptions::default()).expect("sin GLM scaling");
    let fit = fit_slope(&run.records, SlopeAxis::MT).unwrap();
    t.check("8.scaling", (fit.slope + 1.0).abs() <= 0.2, format!("slope vs mT = {:.4}", fit.slope));
}

fn criterion_9(t: &mut Tally) {
    let th = vec![0.5, -0.3, 0.2, 0.4];
    let model = AttentionModel::from_seed(5, 2, 1.0, 8, th.clone(), 7).unwrap();
    let mut rng = derive_stream(90, 0).rng();
    let mut uniform = true;
    for _ in 0..100 {
        let z = model.sample(&th, &mut rng);
        let toks = z.tokens().unwrap();
        let len = rng.random_range(2..=toks.len() - 1);
        let p = model.next_token_dist(&[0.0; 4], &toks[..len]).unwrap();
        uniform &= p.iter().all(|&v| v == 0.2);
    }
    t.check("9.uniform", uniform, "θ = 0 gives exactly 1/K on 100 contexts");

    let floor = model.min_prob_floor();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut lowest = f64::INFINITY;
    for _ in 0..10_000 {
        let v: Vec<f64> = (0..4).map(|_| normal.sample(&mut rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let theta: Vec<f64> = v.iter().map(|x| x / n * model.radius()).collect();
        let z = model.sample(&theta, &mut rng);
        let toks = z.tokens().unwrap();
        let len = rng.random_range(2..=toks.len() - 1);
        let p = model.next_token_dist(&theta, &toks[..len]).unwrap();
        lowest = lowest.min(p.iter().cloned().fold(f64::INFINITY, f64::min));
    }
    t.check("9.floor", lowest >= floor, format!("smallest probability {lowest:.5} ≥ floor {floor:.5} on 10⁴ contexts at ‖θ‖ = R"));

    let mut held = true;
    let mut tightest = f64::INFINITY;
    for k in [3usize, 5, 8] {
        for _ in 0..10_000 {
            // Normalized unit exponentials are uniform on the simplex.
            let e: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(rand_distr::Exp1)).collect();
            let s: f64 = e.iter().sum();
            let p: Vec<f64> = e.iter().map(|v| v / s).collect();
            if p.iter().any(|&v| v <= 0.0) {
                continue;
            }
            let (lam, bound) = min_eig_reduced_cov(&p).unwrap();
            held &= lam >= bound;
            tightest = tightest.min(lam / bound);
        }
    }
    t.check("9.min_eig", held, format!("λ_min ≥ μ/(4(K−1)) on 3×10⁴ simplex points, smallest ratio {tightest:.3}"));
    let (a, b) = min_eig_reduced_cov(&[0.5, 0.5]).unwrap();
    let (c, d) = min_eig_reduced_cov(&[1.0 / 3.0; 3]).unwrap();
    t.check(
        "9.hand_values",
        (a - 0.25).abs() < 1e-12 && (b - 0.125).abs() < 1e-12 && (c - 1.0 / 9.0).abs() < 1e-12 && (d - 1.0 / 24.0).abs() < 1e-12,
        format!("K=2: ({a}, {b}); K=3 uniform: ({c:.6}, {d:.6})"),
    );

    let data = simulate_dataset(&model, &th, 5, 91).unwrap();
    let mut worst = (0.0f64, 0.0f64);
    for z in &data.trajectories {
        let (s, h) = finite_difference_error(&model, &th, z);
        worst = (worst.0.max(s), worst.1.max(h));
    }
    t.check(
        "9.gradient",
        worst.0 < 1e-5 && worst.1 < 1e-5,
        format!("relative errors: score {:.2e}, Hessian {:.2e}", worst.0, worst.1),
    );

    let cfg = ModelConfig::Attention(AttentionConfig {
        k: 5,
        d: 2,
        radius: 1.0,
        horizon: 8,
        theta_star: th,
        embeddings_seed: 7,
        rho1: InitialLaw::UniformPairs,
    });
    let run = run_scaling(&cfg, &grid(&[32, 128, 512], &[8, 32]), 16, 9, &ScalingOptions::default()).expect("attention scaling");
    let fit = fit_slope(&run.records, SlopeAxis::MT).unwrap();
    t.check("9.scaling", (fit.slope + 1.0).abs() <= 0.25, format!("slope vs mT = {:.4}", fit.slope));
}

fn criterion_10(t: &mut Tally) {
    let cfg = two_state_cfg(0.7, 8);
    let g = grid(&[32, 128], &[8, 32, 128]);
    let opts = ScalingOptions {
        predicate_subsample: 0,
        ..ScalingOptions::default()
    };
    let full = run_scaling(&cfg, &g, 64, 10, &opts).expect("full-data run");
    let base = baseline_iid(&cfg, &g, 64, 10, &opts).expect("baseline run");
    let mut ok = true;
    let mut parts = Vec::new();
    for (f, b) in full.records.iter().zip(&base.records) {
        let factor = b.mean_weighted_err / f.mean_weighted_err / (f.horizon - 1) as f64;
        ok &= (0.5..=2.0).contains(&factor);
        parts.push(format!("(m={}, T={}) {factor:.3}", f.m, f.horizon));
    }
    t.check("10.gap", ok, format!("baseline/full error in units of T−1: {}", parts.join(", ")));
    for m in [32usize, 128] {
        let recs: Vec<_> = base.records.iter().filter(|r| r.m == m).cloned().collect();
        let fit = fit_slope(&recs, SlopeAxis::T).unwrap();
        t.check("10.baseline_slope", fit.slope.abs() <= 0.2, format!("m={m}: baseline slope vs T = {:.4}", fit.slope));
    }
}

type Criterion = fn(&mut Tally);

fn main() -> ExitCode {
    let all: [(&str, Criterion); 10] = [
        ("1", criterion_1),
        ("2", criterion_2),
        ("3", criterion_3),
        ("4", criterion_4),
        ("5", criterion_5),
        ("6", criterion_6),
        ("7", criterion_7),
        ("8", criterion_8),
        ("9", criterion_9),
        ("10", criterion_10),
    ];
    let selected: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut tally = Tally { failed: Vec::new() };
    for (id, run) in all {
        if !selected.is_empty() && !selected.iter().any(|s| s == id) {
            continue;
        }
        println!("== criterion {id}");
        let start = Instant::now();
        run(&mut tally);
        println!("   ({:.1} s)", start.elapsed().as_secs_f64());
    }
    println!("criterion 11 (determinism across thread counts) runs in the helloc-cli test suite");
    if tally.failed.is_empty() {
        println!("all selected criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", tally.failed.join(", "));
        ExitCode::FAILURE
    }
}
