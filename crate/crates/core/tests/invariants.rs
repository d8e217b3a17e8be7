use std::path::PathBuf;

use dream_core::env::{load_dataset, Environment, SyntheticEnv};
use dream_core::estimator::{dream_value, known_policy_value, InteractionRecord, TargetPolicy};
use dream_core::harness::{monte_carlo, run_trajectory, ExperimentConfig, MethodSpec, MetricsRow};
use dream_core::linalg::SymMatrix;
use dream_core::policy::{Action, Algorithm, PolicySpec};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

const V_STAR: f64 = 3.274127589;

fn synthetic(alg: Algorithm, horizon: usize, method: &str) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(
        Environment::Synthetic(SyntheticEnv::default()),
        PolicySpec::new(alg),
        horizon,
    );
    c.checkpoints = vec![horizon];
    c.methods = vec![MethodSpec::parse(method).unwrap()];
    c
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn post_burn_in(records: &[InteractionRecord]) -> Vec<InteractionRecord> {
    records.iter().filter(|r| !r.burn_in).cloned().collect()
}

#[test]
fn quadrature_goldens() {
    let env = SyntheticEnv::default();
    let v = env.oracle_value(2000).unwrap();
    assert!((v - V_STAR).abs() < 1e-6, "{v}");
    assert!((v - 3.27).abs() < 0.005);
    let s = env.oracle_sigma_dr(|_, _| 0.0, 2000).unwrap();
    assert!((s - 1.63455808).abs() < 1e-6, "{s}");
    let one = env.oracle_action_value(Action::One, 2000).unwrap();
    assert!((one - 1.0).abs() < 1e-9, "{one}");
    let zero = env.oracle_action_value(Action::Zero, 2000).unwrap();
    assert!((zero - 2.0).abs() < 1e-9, "{zero}");
}

#[test]
fn quadrature_refinement_converges() {
    let env = SyntheticEnv::default();
    let coarse = (env.oracle_value(200).unwrap() - V_STAR).abs();
    let fine = (env.oracle_value(1600).unwrap() - V_STAR).abs();
    assert!(fine < coarse, "{coarse} -> {fine}");
    assert!(fine < 1e-5);
}

#[test]
fn oracle_policy_is_the_pointwise_argmax() {
    let env = SyntheticEnv::default();
    let w = env.oracle_threshold();
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    for _ in 0..10_000 {
        let d = env.sample_step(&mut rng);
        let x = &d.context;
        let argmax = Action::from_bool(
            env.mean(x, Action::One).unwrap() > env.mean(x, Action::Zero).unwrap(),
        );
        assert_eq!(env.oracle_policy(x).unwrap(), argmax);
        let rule = w[0] + w[1] * x[1].cos() + w[2] * x[2].cos() > 0.0;
        assert_eq!(Action::from_bool(rule), argmax);
    }
}

#[test]
fn synthetic_noise_has_the_configured_scale() {
    let env = SyntheticEnv::default();
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    for a in [Action::Zero, Action::One] {
        let res: Vec<f64> = (0..10_000)
            .map(|_| {
                let d = env.sample_step(&mut rng);
                d.reward(a) - env.mean(&d.context, a).unwrap()
            })
            .collect();
        let (m, se) = mean_and_se(&res);
        let sd = se * (res.len() as f64).sqrt();
        assert!((sd - 0.1).abs() < 0.005, "{sd}");
        assert!(m.abs() < 4.0 * se);
    }
}

#[test]
fn label_matching_attains_unit_value_on_the_bundled_dataset() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/sea_like.csv");
    let data = load_dataset(&path).unwrap();
    let n = data.len();
    let env = Environment::Dataset(data.into());
    assert_eq!(env.optimal_value(100).unwrap(), 1.0);
    let mut session = env.session();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let mut rewards = Vec::with_capacity(n);
    for _ in 0..n {
        let d = session.sample_step(&mut rng).unwrap();
        let label = Action::from_bool(d.means[1] > d.means[0]);
        rewards.push(d.reward(label));
    }
    assert!(session.sample_step(&mut rng).is_err());
    let (m, se) = mean_and_se(&rewards);
    assert!((m - 1.0).abs() < 4.0 * se, "{m} ± {se}");
}

#[test]
fn ts_trajectory_matches_recorded_golden() {
    let golden = include_str!("golden/ts_seed42_t300.txt");
    let actions: String = golden.lines().filter(|l| !l.starts_with('#')).collect();
    let v_line = golden
        .lines()
        .find_map(|l| l.strip_prefix("# v_hat "))
        .unwrap();
    let v_golden: f64 = v_line.trim().parse().unwrap();

    let out = run_trajectory(&synthetic(Algorithm::Ts, 300, "dream"), 42).unwrap();
    let ours: String = out
        .primary_records()
        .iter()
        .map(|r| if r.action == Action::One { '1' } else { '0' })
        .collect();
    assert_eq!(ours, actions);
    let v = out.methods[0].reports[0].1.v_hat;
    assert!(
        (v - v_golden).abs() <= 1e-12 * v_golden.abs(),
        "{v} vs {v_golden}"
    );
}

#[test]
fn clipping_condition_holds_after_every_guarded_step() {
    for alg in [Algorithm::Ucb, Algorithm::Ts, Algorithm::Eg] {
        let c = synthetic(alg, 1000, "dream");
        let p = c.policy.clipping.at(1);
        for seed in 0..5 {
            let out = run_trajectory(&c, seed).unwrap();
            let mut arm = [SymMatrix::zeros(3), SymMatrix::zeros(3)];
            let mut total = SymMatrix::zeros(3);
            for r in out.primary_records() {
                arm[r.action.index()]
                    .add_outer_in_place(&r.context, 1.0)
                    .unwrap();
                total.add_outer_in_place(&r.context, 1.0).unwrap();
                if r.t <= c.policy.burn_in {
                    continue;
                }
                let rhs = p * total.min_eigenvalue().unwrap();
                for g in &arm {
                    let lhs = g.min_eigenvalue().unwrap();
                    assert!(
                        lhs >= rhs,
                        "{} seed {seed} t {}: {lhs} < {rhs}",
                        alg.name(),
                        r.t
                    );
                }
            }
        }
    }
}

#[test]
fn oracle_outcome_model_protects_against_a_wrong_kappa() {
    let env = SyntheticEnv::default();
    let c = synthetic(Algorithm::Ucb, 2000, "dream");
    let estimates: Vec<f64> = (0..200)
        .map(|i| {
            let out = run_trajectory(&c, 500 + i).unwrap();
            let mut records = post_burn_in(out.primary_records());
            for r in &mut records {
                r.mu_hat = [
                    env.mean(&r.context, Action::Zero).unwrap(),
                    env.mean(&r.context, Action::One).unwrap(),
                ];
                r.kappa_hat = 0.3;
            }
            dream_value(&records).unwrap()
        })
        .collect();
    let (m, se) = mean_and_se(&estimates);
    assert!((m - V_STAR).abs() < 3.0 * se, "{m} ± {se}");
}

#[test]
fn exact_kappa_protects_against_a_wrong_outcome_model() {
    let c = synthetic(Algorithm::Eg, 2000, "dream_kappa_eg");
    let estimates: Vec<f64> = (0..200)
        .map(|i| {
            let out = run_trajectory(&c, 900 + i).unwrap();
            let mut records = post_burn_in(out.primary_records());
            for r in &mut records {
                assert!(!r.forced_by_clipping);
                assert_eq!(r.kappa_hat, c.policy.epsilon_at(r.t) / 2.0);
                r.mu_hat = [1.0, -1.0];
            }
            dream_value(&records).unwrap()
        })
        .collect();
    let (m, se) = mean_and_se(&estimates);
    assert!((m - V_STAR).abs() < 3.0 * se, "{m} ± {se}");
}

#[test]
fn constant_policy_interval_covers_its_quadrature_value() {
    let target = SyntheticEnv::default()
        .oracle_action_value(Action::One, 2000)
        .unwrap();
    let mut c = synthetic(Algorithm::Eg, 2000, "dream");
    c.policy.eg_eps = "0.5".parse().unwrap();
    let reps = 200;
    let covered = (0..reps)
        .filter(|&i| {
            let out = run_trajectory(&c, 3000 + i).unwrap();
            let records = post_burn_in(out.primary_records());
            let r = known_policy_value(
                &records,
                &TargetPolicy::Constant(Action::One),
                &out.final_model,
                0.05,
            )
            .unwrap();
            r.covers(target)
        })
        .count();
    assert!(covered as f64 / reps as f64 >= 0.85, "{covered}/{reps}");
}

#[test]
fn monte_carlo_is_deterministic_and_order_free() {
    let mut c = synthetic(Algorithm::Ts, 400, "dream");
    c.checkpoints = vec![200, 400];
    c.replications = 12;
    let a = monte_carlo(&c).unwrap();
    let b = monte_carlo(&c).unwrap();
    assert_eq!(format!("{:?}", a.rows), format!("{:?}", b.rows));

    let target = c.target().unwrap();
    let reports: Vec<_> = a.replications.iter().map(|s| &s.reports[0][1]).collect();
    let forward = MetricsRow::from_reports(400, "dream", &reports, target);
    let mut rev = reports.clone();
    rev.reverse();
    let backward = MetricsRow::from_reports(400, "dream", &rev, target);
    assert_eq!(forward.coverage, backward.coverage);
    for (x, y) in [
        (forward.mean_bias, backward.mean_bias),
        (forward.mc_sd, backward.mc_sd),
        (forward.mean_se, backward.mean_se),
    ] {
        assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()), "{x} vs {y}");
    }
}
