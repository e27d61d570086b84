use approx::assert_abs_diff_eq;
use ipmdpg::battery::EnvParams;
use ipmdpg::mpc::{MpcConfig, MpcPolicy, PolicyParams};
use ipmdpg::rl::{
    collect_batch, compatible_from_gradient, gradient_density, lstd_fit, policy_gradient_estimate,
    run_learning, small_gradient_fraction, td_fixed_point_residual, CriticParams, CriticSample,
    LearnerConfig, RlError, TauSchedule,
};
use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn policy() -> MpcPolicy<f64> {
    MpcPolicy::new(MpcConfig::default(), EnvParams::default().tariff()).unwrap()
}

fn synthetic_batch(n: usize, seed: u64) -> Vec<CriticSample<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let s: f64 = rng.random_range(-0.2..1.2);
            let next = s + rng.random_range(-0.1..0.1);
            let psi = Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            CriticSample::new(psi, s, next, rng.random_range(-3.0..5.0))
        })
        .collect()
}

/// Builds the normal equations from scratch and solves them by SVD.
fn dense_oracle(samples: &[CriticSample<f64>], discount: f64, ridge: f64) -> Vec<f64> {
    let feat = |s: f64| [(s - 0.5) * (s - 0.5), s, 1.0];
    let mut a = DMatrix::<f64>::identity(5, 5) * ridge;
    let mut b = DVector::<f64>::zeros(5);
    for smp in samples {
        // recover the states from the stored features
        let s = smp.phi[1];
        let sn = smp.phi_next[1];
        let (f, fnext) = (feat(s), feat(sn));
        let row = [smp.psi[0], smp.psi[1], f[0], f[1], f[2]];
        let next = [0.0, 0.0, fnext[0], fnext[1], fnext[2]];
        for i in 0..5 {
            for j in 0..5 {
                a[(i, j)] += row[i] * (row[j] - discount * next[j]);
            }
            b[i] += row[i] * smp.cost;
        }
    }
    a.svd(true, true).solve(&b, 0.0).unwrap().iter().copied().collect()
}

fn rel_close(got: &[f64], want: &[f64], tol: f64) -> bool {
    let scale = want.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    got.iter().zip(want).all(|(g, w)| (g - w).abs() <= tol * scale)
}

#[test]
fn lstd_matches_dense_oracle() {
    for seed in 0..5 {
        let batch = synthetic_batch(200, seed);
        let fit = lstd_fit(&batch, 0.9985, 1e-8).unwrap();
        let want = dense_oracle(&batch, 0.9985, 1e-8);
        let got: Vec<f64> = fit.stacked().iter().copied().collect();
        assert!(rel_close(&got, &want, 1e-10), "{got:?} vs {want:?}");
    }
}

#[test]
fn lstd_is_invariant_to_duplicating_the_batch() {
    let batch = synthetic_batch(200, 11);
    let doubled: Vec<_> = batch.iter().chain(batch.iter()).copied().collect();
    let once = lstd_fit(&batch, 0.99, 0.0).unwrap().stacked();
    let twice = lstd_fit(&doubled, 0.99, 0.0).unwrap().stacked();
    let a: Vec<f64> = once.iter().copied().collect();
    let b: Vec<f64> = twice.iter().copied().collect();
    assert!(rel_close(&b, &a, 1e-9));
}

#[test]
fn lstd_solution_is_a_td_fixed_point() {
    let batch = synthetic_batch(200, 3);
    let fit = lstd_fit(&batch, 0.9985, 1e-8).unwrap();
    let r = td_fixed_point_residual(&batch, &fit, 0.9985, 1e-8);
    let scale: f64 = batch.iter().map(|s| s.cost.abs()).sum();
    assert!(r.amax() <= 1e-8 * scale, "residual {}", r.amax());
}

#[test]
fn constant_cost_is_explained_by_the_value_intercept() {
    // L = 1 everywhere: V = 1/(1-γ) through the constant feature, no advantage
    let mut batch = synthetic_batch(200, 5);
    for smp in &mut batch {
        smp.cost = 1.0;
    }
    let fit = lstd_fit(&batch, 0.9, 0.0).unwrap();
    assert_abs_diff_eq!(fit.v, Vector3::new(0.0, 0.0, 10.0), epsilon = 1e-9);
    assert_abs_diff_eq!(fit.w, Vector2::zeros(), epsilon = 1e-9);
}

#[test]
fn invalid_learner_configs_rejected() {
    let env = EnvParams::default();
    let pol = policy();
    let bad = [
        LearnerConfig { batch_size: 3, ..Default::default() },
        LearnerConfig { discount: 1.0, ..Default::default() },
        LearnerConfig { grad_clip: 0.0, ..Default::default() },
        LearnerConfig {
            schedule: TauSchedule { initial: 1e-4, step: 1e-5, floor: 1e-3 },
            ..Default::default()
        },
    ];
    for cfg in bad {
        assert!(matches!(run_learning(&env, &pol, &cfg, 1), Err(RlError::InvalidConfig(_))));
    }
}

fn short_config() -> LearnerConfig<f64> {
    LearnerConfig {
        steps: 12,
        batch_size: 20,
        initial_theta: [6.0, 3.0],
        eval_every: 5,
        eval_rollouts: 4,
        eval_horizon: 50,
        table_points: 41,
        schedule: TauSchedule { initial: 1e-2, step: 2e-3, floor: 1e-3 },
        ..Default::default()
    }
}

#[test]
fn homotopy_tau_is_monotone_and_settles_on_the_floor() {
    let trace = run_learning(&EnvParams::default(), &policy(), &short_config(), 2).unwrap();
    let taus: Vec<f64> = trace.rows.iter().map(|r| r.tau).collect();
    assert_eq!(taus.len(), 12);
    assert!(taus.windows(2).all(|w| w[1] <= w[0]));
    let first = taus.iter().position(|&t| t == 1e-3).unwrap();
    assert_eq!(first, 5);
    assert!(taus[first..].iter().all(|&t| t == 1e-3));
    assert!(trace.rows.iter().all(|r| r.j.is_finite() && r.grad_norm.is_finite()));
    // J is refreshed every 5 steps and carried forward in between
    assert_eq!(trace.rows[1].j, trace.rows[0].j);
    assert_eq!(trace.rows[4].j, trace.rows[0].j);
}

#[test]
fn learning_is_deterministic_per_seed() {
    let env = EnvParams::default();
    let pol = policy();
    let cfg = short_config();
    let a = run_learning(&env, &pol, &cfg, 9).unwrap();
    let b = run_learning(&env, &pol, &cfg, 9).unwrap();
    assert_eq!(a, b);
    let c = run_learning(&env, &pol, &cfg, 10).unwrap();
    assert_ne!(a.rows, c.rows);
}

#[test]
fn zero_learning_rate_keeps_theta() {
    let cfg = LearnerConfig { learning_rate: 0.0, steps: 4, ..short_config() };
    let trace = run_learning(&EnvParams::default(), &policy(), &cfg, 1).unwrap();
    assert!(trace.rows.iter().all(|r| [r.theta1, r.theta2] == [6.0, 3.0]));
    assert_eq!(trace.final_theta, [6.0, 3.0]);
}

#[test]
fn batch_is_a_chained_trajectory() {
    let env = EnvParams::default();
    let batch = collect_batch(&env, &policy(), &PolicyParams::new(7.0, 3.0), 1e-2, 0.5, 60, 0.1, 4);
    assert_eq!(batch.skipped, 0);
    assert_eq!(batch.transitions.len(), 60);
    for w in batch.transitions.windows(2) {
        assert_eq!(w[0].next_s, w[1].s);
    }
    for (tr, (pi, _)) in batch.transitions.iter().zip(&batch.policy) {
        assert!(tr.a.abs() <= env.u_max);
        assert_abs_diff_eq!(tr.a, env.clamp_action(pi + tr.exploration), epsilon = 1e-15);
        assert_eq!(tr.cost, env.rl_stage_cost(tr.s, tr.a));
        assert_abs_diff_eq!(tr.next_s, env.step(tr.s, tr.a, tr.noise), epsilon = 1e-15);
    }
}

#[test]
fn exploration_free_batch_has_zero_compatible_features() {
    let env = EnvParams::default();
    let batch = collect_batch(&env, &policy(), &PolicyParams::new(7.0, 3.0), 1e-2, 0.5, 20, 0.0, 4);
    assert!(batch.critic_samples().iter().all(|s| s.psi == Vector2::zeros()));
}

#[test]
fn density_is_normalized_to_unit_peak() {
    let env = EnvParams::default();
    let d = gradient_density(
        &env,
        &policy(),
        &PolicyParams::new(7.0, 3.0),
        1e-2,
        0.5,
        200,
        0.1,
        0.9985,
        1e-8,
        3,
    )
    .unwrap();
    assert_eq!(d.len(), 200);
    let peak = d.iter().map(|x| x.magnitude()).fold(0.0, f64::max);
    assert_abs_diff_eq!(peak, 1.0, epsilon = 1e-15);
    assert_eq!(small_gradient_fraction(&d, 1.0 + 1e-12), 1.0);
    assert_eq!(small_gradient_fraction(&d, 0.0), 0.0);
}

proptest! {
    #[test]
    fn gradient_estimate_is_gram_times_w(
        grads in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..40),
        w1 in -3.0f64..3.0,
        w2 in -3.0f64..3.0,
    ) {
        let g: Vec<[f64; 2]> = grads.iter().map(|&(a, b)| [a, b]).collect();
        let w = Vector2::new(w1, w2);
        let est = policy_gradient_estimate(&g, &w);
        let mut gram = nalgebra::Matrix2::<f64>::zeros();
        for x in &g {
            let v = Vector2::new(x[0], x[1]);
            gram += v * v.transpose();
        }
        let want = gram * w / g.len() as f64;
        prop_assert!((est - want).amax() <= 1e-12 * (1.0 + want.amax()));
        prop_assert!(est.dot(&w) >= -1e-12);
    }

    #[test]
    fn q_equals_v_at_the_policy_action(
        s in -0.5f64..1.5,
        pi in -1.0f64..1.0,
        g1 in -10.0f64..10.0,
        g2 in -10.0f64..10.0,
        w in prop::array::uniform5(-5.0f64..5.0),
    ) {
        let params = CriticParams {
            w: Vector2::new(w[0], w[1]),
            v: Vector3::new(w[2], w[3], w[4]),
        };
        let psi = compatible_from_gradient([g1, g2], pi, pi);
        prop_assert_eq!(params.q_value(&psi, s), params.value(s));
    }

    #[test]
    fn lstd_fit_is_finite_on_random_batches(seed in 0u64..1000) {
        let fit = lstd_fit(&synthetic_batch(50, seed), 0.99, 1e-8).unwrap();
        prop_assert!(fit.stacked().iter().all(|v| v.is_finite()));
    }
}
