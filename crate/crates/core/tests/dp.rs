use approx::assert_abs_diff_eq;
use ipmdpg::battery::EnvParams;
use ipmdpg::dp::{
    gauss_hermite, policy_performance, value_iteration, DpError, DpGrid, DpGridConfig, DpSolution, RolloutConfig,
};
use ipmdpg::mpc::{MpcConfig, MpcPolicy, PolicyParams};
use std::sync::OnceLock;

const TOL: f64 = 1e-9;

fn default_solution() -> &'static DpSolution<f64> {
    static SOL: OnceLock<DpSolution<f64>> = OnceLock::new();
    SOL.get_or_init(|| {
        let env = EnvParams::default();
        let grid = DpGrid::new(&env, &DpGridConfig::default()).unwrap();
        value_iteration(&env, &grid, TOL, 200_000).unwrap()
    })
}

fn zero_cost_env() -> EnvParams<f64> {
    EnvParams {
        buy_price: 0.0,
        sell_price: 0.0,
        noise_variance: 0.0,
        penalty: 0.0,
        ..EnvParams::default()
    }
}

fn rollouts(n: usize, seed: u64) -> RolloutConfig<f64> {
    RolloutConfig {
        discount: DpGridConfig::<f64>::default().discount,
        rollouts: n,
        horizon: 6200,
        seed,
    }
}

#[test]
fn quadrature_matches_normal_moments() {
    let (x, w) = gauss_hermite(11);
    assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    let moment = |k: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum::<f64>();
    // E[Z^2k] = (2k-1)!!
    for (k, want) in [(1, 0.0_f64), (2, 1.0), (3, 0.0), (4, 3.0), (6, 15.0), (8, 105.0), (20, 654_729_075.0)] {
        assert_abs_diff_eq!(moment(k), want, epsilon = 1e-9 * want.max(1.0));
    }
    assert!(x.windows(2).all(|p| p[0] < p[1]));
}

#[test]
fn zero_cost_mdp_has_zero_value_and_idle_policy() {
    let env = zero_cost_env();
    let grid = DpGrid::new(&env, &DpGridConfig::default()).unwrap();
    let sol = value_iteration(&env, &grid, TOL, 1000).unwrap();
    assert!(sol.values.iter().all(|&v| v == 0.0));
    assert!(sol.policy.iter().all(|&a| a == 0.0));
    let perf = policy_performance(|_| 0.7, &env, &rollouts(8, 1));
    assert_eq!((perf.mean, perf.std_error), (0.0, 0.0));
}

#[test]
fn optimal_policy_has_buy_idle_sell_structure() {
    let sol = default_solution();
    assert!(sol.residual <= TOL);
    // buying near empty follows an order-up-to ramp, full power only below the ramp
    let (near_empty, _) = sol.optimal_action(0.01);
    assert!(near_empty > 0.0 && near_empty < 1.0);
    assert_eq!(sol.optimal_action(-0.05), (1.0, false));
    assert_eq!(sol.optimal_action(0.3), (0.0, false));
    assert_eq!(sol.optimal_action(0.8), (-1.0, false));
    // intermediate actions only appear on the two ramps, each about one step of SOC wide
    let ramp = |s: f64| s < 0.06 || (0.47..0.58).contains(&s);
    for (s, a) in sol.states.iter().zip(&sol.policy) {
        if (0.0..=1.0).contains(s) && ![-1.0, 0.0, 1.0].contains(a) {
            assert!(ramp(*s), "intermediate action {a} at s = {s}");
        }
    }
    assert!(sol.policy.iter().all(|a| a.abs() <= 1.0));
}

#[test]
fn out_of_range_lookup_is_clamped_and_flagged() {
    let sol = default_solution();
    let (a, clamped) = sol.optimal_action(5.0);
    assert!(clamped);
    assert_eq!(a, *sol.policy.last().unwrap());
    assert!(sol.optimal_action(-5.0).1);
}

#[test]
fn bellman_residual_is_below_tolerance_at_every_node() {
    let env = EnvParams::default();
    let grid = DpGrid::new(&env, &DpGridConfig::default()).unwrap();
    let sol = default_solution();
    let g = grid.discount;
    for (i, &s) in sol.states.iter().enumerate() {
        let best = grid
            .actions
            .iter()
            .map(|&a| {
                grid.noise_nodes
                    .iter()
                    .zip(&grid.noise_weights)
                    .map(|(&d, &w)| w * (env.rl_stage_cost(s, a) + g * grid.interpolate(&sol.values, env.step(s, a, d))))
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        // a converged sweep moves V by at most tol, which bounds the one-step Bellman gap by tol·γ/(1-γ)
        assert!((best - sol.values[i]).abs() <= TOL * g / (1.0 - g) + 1e-9, "node {i}");
    }
}

#[test]
fn refining_the_grid_barely_moves_the_value() {
    let env = EnvParams::default();
    let coarse = default_solution();
    let fine_cfg = DpGridConfig {
        state_nodes: 2 * DpGridConfig::<f64>::default().state_nodes - 1,
        ..DpGridConfig::default()
    };
    let grid = DpGrid::new(&env, &fine_cfg).unwrap();
    let fine = value_iteration(&env, &grid, TOL, 200_000).unwrap();
    let mut worst = 0.0_f64;
    for k in 0..=100 {
        let s = k as f64 / 100.0;
        worst = worst.max((coarse.value(s) - fine.value(s)).abs());
    }
    let scale = coarse.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    assert!(worst <= 2e-3 * scale, "sup-norm change {worst} vs scale {scale}");
}

#[test]
fn csv_export_has_header_and_one_row_per_node() {
    let sol = default_solution();
    let mut buf = Vec::new();
    let rows = sol.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("s,V,pi"));
    assert_eq!(rows, sol.states.len());
    assert_eq!(lines.count(), rows);
}

#[test]
fn grid_and_iteration_preconditions() {
    let env = EnvParams::default();
    let bad_discount = DpGridConfig {
        discount: 1.0,
        ..DpGridConfig::default()
    };
    assert!(matches!(DpGrid::new(&env, &bad_discount), Err(DpError::InvalidGrid(_))));
    let narrow = DpGridConfig {
        state_lo: 0.0,
        ..DpGridConfig::default()
    };
    assert!(matches!(DpGrid::new(&env, &narrow), Err(DpError::InvalidGrid(_))));
    let grid = DpGrid::new(&env, &DpGridConfig::default()).unwrap();
    assert!(matches!(value_iteration(&env, &grid, 0.0, 10), Err(DpError::InvalidGrid(_))));
    assert!(matches!(value_iteration(&env, &grid, TOL, 3), Err(DpError::NotConverged { .. })));
    assert_abs_diff_eq!(grid.noise_weights.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
}

#[test]
fn optimal_policy_beats_doing_nothing() {
    let env = EnvParams::default();
    let sol = default_solution();
    let rc = rollouts(64, 3);
    let star = policy_performance(|s| sol.optimal_action(s).0, &env, &rc);
    let zero = policy_performance(|_| 0.0, &env, &rc);
    assert!(star.mean <= zero.mean - 3.0 * zero.std_error.max(star.std_error));
}

#[test]
fn optimal_policy_is_no_worse_than_a_test_family() {
    let env = EnvParams::default();
    let sol = default_solution();
    let rc = rollouts(64, 4);
    let star = policy_performance(|s| sol.optimal_action(s).0, &env, &rc);
    let mpc = MpcPolicy::new(MpcConfig::default(), env.tariff()).unwrap();
    let mut family: Vec<Box<dyn Fn(f64) -> f64>> = vec![Box::new(|_| 0.0), Box::new(|_| 0.5), Box::new(|_| -0.3)];
    for th in [[3.0, 3.0], [7.0, 3.0], [10.0, 10.0]] {
        let t = mpc.tabulate(&PolicyParams(th), 1e-3, -0.3, 1.3, 401).unwrap();
        family.push(Box::new(move |s| t.eval(s)));
    }
    for (k, p) in family.iter().enumerate() {
        let perf = policy_performance(p, &env, &rc);
        assert!(star.mean <= perf.mean + 3.0 * perf.std_error, "member {k}: {} vs {}", star.mean, perf.mean);
    }
}

#[test]
fn standard_error_scales_with_rollout_count() {
    let env = EnvParams::default();
    let sol = default_solution();
    let ratio: f64 = (0..4)
        .map(|seed| {
            let a = policy_performance(|s| sol.optimal_action(s).0, &env, &rollouts(200, 10 + seed));
            let b = policy_performance(|s| sol.optimal_action(s).0, &env, &rollouts(400, 10 + seed));
            b.std_error / a.std_error
        })
        .sum::<f64>()
        / 4.0;
    let want = 0.5f64.sqrt();
    assert!((ratio / want - 1.0).abs() <= 0.2, "ratio {ratio}");
}

#[test]
fn performance_estimate_is_deterministic_and_truncation_is_small() {
    let env = EnvParams::default();
    let rc = rollouts(16, 9);
    let a = policy_performance(|s| if s < 0.2 { 1.0 } else { 0.0 }, &env, &rc);
    let b = policy_performance(|s| if s < 0.2 { 1.0 } else { 0.0 }, &env, &rc);
    assert_eq!(a, b);
    assert!(rc.truncation_weight() <= 1e-4);
}
