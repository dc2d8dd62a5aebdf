use nalgebra::DMatrix;
use proptest::prelude::*;

use helloc_core::attention::pinned_softmax;
use helloc_core::config::ModelConfig;
use helloc_core::divergences::hellinger_sq_two_state;
use helloc_core::estimation::build_cover;
use helloc_core::harness::{parse_csv, records_to_csv, ExperimentRecord};
use helloc_core::io::{format_dataset, parse_dataset};
use helloc_core::markov::{mixture_hellinger_sq, MixtureModel, TwoStateModel};
use helloc_core::model::simulate_dataset;
use helloc_core::{derive_stream, sufficient_m, FisherMatrix, ModelSpec, Normalization, Trajectory};

fn binary_paths(t: usize) -> impl Iterator<Item = Trajectory> {
    (0..1u32 << t).map(move |bits| Trajectory::discrete((0..t).map(|i| 1 + (bits >> i & 1)).collect()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sufficient_m_certifies_the_implicit_bound(a in 1.0f64..1e3, b in 1.1f64..1e3, nu in 0.1f64..3.0) {
        let m = sufficient_m(a, b, nu) as f64;
        let arg = b * m;
        prop_assume!(arg > 1.0);
        prop_assert!(m >= a * arg.ln().powf(nu) * (1.0 - 1e-12), "m={m} a={a} b={b} nu={nu}");
    }

    #[test]
    fn sufficient_m_is_monotone_in_a(a in 1.0f64..1e3, scale in 1.0f64..10.0, b in 1.1f64..1e3, nu in 0.1f64..3.0) {
        prop_assert!(sufficient_m(a * scale, b, nu) >= sufficient_m(a, b, nu));
    }

    #[test]
    fn two_state_hellinger_matches_enumeration(t0 in 0.06f64..0.94, t1 in 0.06f64..0.94, horizon in 2usize..8) {
        let model = TwoStateModel::new(t0, 0.05, horizon).unwrap();
        let h2: f64 = binary_paths(horizon)
            .map(|z| {
                let p = model.loglik(&[t0], &z).exp();
                let q = model.loglik(&[t1], &z).exp();
                (p.sqrt() - q.sqrt()).powi(2)
            })
            .sum();
        let closed = hellinger_sq_two_state(t0, t1, horizon).unwrap().value;
        prop_assert!((h2 - closed).abs() < 1e-12, "{h2} vs {closed}");
    }

    #[test]
    fn two_state_path_law_sums_to_one(theta in 0.06f64..0.94, horizon in 2usize..9) {
        let model = TwoStateModel::new(theta, 0.05, horizon).unwrap();
        let total: f64 = binary_paths(horizon).map(|z| model.loglik(&[theta], &z).exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixture_likelihood_ignores_component_order(a in 0.05f64..0.95, b in 0.05f64..0.95, seed in any::<u64>()) {
        let model = MixtureModel::new([0.8, 0.2], 0.05, 12).unwrap();
        let mut rng = derive_stream(seed, 0).rng();
        let z = model.sample(&[0.8, 0.2], &mut rng);
        let l1 = model.loglik(&[a, b], &z);
        let l2 = model.loglik(&[b, a], &z);
        prop_assert!((l1 - l2).abs() <= 1e-12 * l1.abs().max(1.0));
        prop_assert!(mixture_hellinger_sq(&[a, b], &[b, a], 12).abs() < 1e-12);
    }

    #[test]
    fn dataset_text_round_trips(family_ix in 0usize..5, m in 1usize..6, seed in any::<u64>()) {
        let family = ["two_state", "mixture", "regression", "sin_glm", "attention"][family_ix];
        let model = ModelConfig::desk_default(family).unwrap().build().unwrap();
        let data = simulate_dataset(model.as_ref(), model.true_param(), m, seed).unwrap();
        let back = parse_dataset(&format_dataset(&data)).unwrap();
        prop_assert_eq!(back, data);
    }

    #[test]
    fn scaling_csv_round_trips(
        rows in prop::collection::vec((1usize..5000, 2usize..500, 1usize..100, 1e-9f64..1e3, 1e-9f64..1e3, any::<u64>()), 1..6)
    ) {
        let records: Vec<ExperimentRecord> = rows
            .into_iter()
            .map(|(m, t, n, e, s, seed)| ExperimentRecord {
                model_id: "two_state".into(),
                m,
                horizon: t,
                n_reps: n,
                mean_weighted_err: e,
                median_weighted_err: e / 2.0,
                mean_sq_err: s,
                se: s / 7.0,
                master_seed: seed,
                wall_ms: 0,
            })
            .collect();
        prop_assert_eq!(parse_csv(&records_to_csv(&records)).unwrap(), records);
    }

    #[test]
    fn cover_reaches_every_point(eps in 0.005f64..0.2, u in 0.0f64..1.0) {
        let model = TwoStateModel::new(0.7, 0.05, 8).unwrap();
        let i_max = model.fisher_upper_bound().unwrap();
        let cover = build_cover(model.domain(), &i_max, eps).unwrap();
        let theta = 0.05 + 0.9 * u;
        prop_assert!(cover.distance_to_nearest(&[theta]) <= eps * (1.0 + 1e-12));
    }

    #[test]
    fn pinned_softmax_is_a_distribution(x in prop::collection::vec(-50.0f64..50.0, 1..8), shift in -5.0f64..5.0) {
        let p = pinned_softmax(&x);
        prop_assert_eq!(p.len(), x.len() + 1);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // shifting the free logits by c is the same as shifting the pinned one by -c
        let shifted: Vec<f64> = x.iter().map(|v| v + shift).collect();
        let q = pinned_softmax(&shifted);
        let ratio = (q[0] / q[x.len()]).ln() - (p[0] / p[x.len()]).ln();
        prop_assert!((ratio - shift).abs() < 1e-9);
    }

    #[test]
    fn gram_matrices_are_accepted_as_fisher(entries in prop::collection::vec(-3.0f64..3.0, 9), v in prop::collection::vec(-1.0f64..1.0, 3)) {
        let a = DMatrix::from_vec(3, 3, entries);
        let f = FisherMatrix::new(&a * a.transpose(), Normalization::PerTrajectory).unwrap();
        prop_assert!(f.lambda_min() >= -1e-9 * f.lambda_max().max(1.0));
        prop_assert!(f.quad_form(&v) >= -1e-9);
        let per_step = f.per_step(4);
        prop_assert!((per_step.lambda_max() * 4.0 - f.lambda_max()).abs() < 1e-9 * f.lambda_max().max(1.0));
    }
}

#[test]
fn indefinite_matrix_is_rejected_as_fisher() {
    let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    assert!(FisherMatrix::new(m, Normalization::PerTrajectory).is_err());
}
