use approx::assert_abs_diff_eq;
use ipmdpg::battery::EnvParams;
use ipmdpg::ipm::ParametricNlp;
use ipmdpg::mpc::{build_nlp, MpcConfig, MpcError, MpcPolicy, PolicyParams};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn policy() -> MpcPolicy<f64> {
    MpcPolicy::new(MpcConfig::default(), EnvParams::default().tariff()).unwrap()
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// `π` by central differences over `θ` at a tight solver tolerance.
fn fd_gradient(pol: &MpcPolicy<f64>, s: f64, th: [f64; 2], tau: f64) -> [f64; 2] {
    let h = 1e-5;
    let mut g = [0.0; 2];
    for (k, gk) in g.iter_mut().enumerate() {
        let mut tp = th;
        let mut tm = th;
        tp[k] += h;
        tm[k] -= h;
        let up = pol.action(s, &PolicyParams(tp), tau, None).unwrap().0;
        let um = pol.action(s, &PolicyParams(tm), tau, None).unwrap().0;
        *gk = (up - um) / (2.0 * h);
    }
    g
}

#[test]
fn horizon_ten_dimensions() {
    let nlp = build_nlp(MpcConfig::default(), EnvParams::default().tariff()).unwrap();
    let d = ParametricNlp::<f64>::dims(&nlp);
    // 11 states, buy and sell inputs for 10 stages, 11 slacks
    assert_eq!(d.n_z, 11 + 2 * 10 + 11);
    assert_eq!(d.n_g, 11);
    assert_eq!(d.n_h, 3 * 11 + 4 * 10);
    assert_eq!((d.n_theta, d.n_s), (2, 1));
}

#[test]
fn zero_curvature_leaves_economic_and_slack_cost() {
    let nlp = build_nlp(MpcConfig::default(), EnvParams::default().tariff()).unwrap();
    let d = ParametricNlp::<f64>::dims(&nlp);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let z = DVector::from_fn(d.n_z, |_, _| rng.random_range(0.0..1.0));
    let mut want = 10.0 * z[nlp.slack_index(10)];
    for i in 0..10 {
        let disc = 0.99f64.powi(i as i32);
        want += disc * (5.0 * z[nlp.buy_index(i)] - 2.5 * z[nlp.sell_index(i)] + 10.0 * z[nlp.slack_index(i)]);
    }
    let got = nlp.cost(&z, &DVector::from_vec(vec![0.0, 0.0]));
    assert_abs_diff_eq!(got, want, epsilon = 1e-12);
}

#[test]
fn reference_trajectory_costs_nothing() {
    let nlp = build_nlp(MpcConfig::default(), EnvParams::default().tariff()).unwrap();
    let d = ParametricNlp::<f64>::dims(&nlp);
    let mut z = DVector::zeros(d.n_z);
    for i in 0..=10 {
        z[nlp.x_index(i)] = 0.5;
    }
    assert_eq!(nlp.cost(&z, &DVector::from_vec(vec![1.0, 1.0])), 0.0);
    assert_eq!(nlp.equalities(&z, &DVector::from_element(1, 0.5), &DVector::from_vec(vec![1.0, 1.0])).amax(), 0.0);
}

#[test]
fn strong_tracking_holds_the_reference() {
    let e = policy().evaluate(0.5, &PolicyParams([50.0, 50.0]), 1e-2, None).unwrap();
    assert!(e.action.abs() <= 0.05, "u0 = {}", e.action);
}

#[test]
fn full_charge_without_tracking_sells_at_full_power() {
    let e = policy().evaluate(1.0, &PolicyParams([0.0, 0.0]), 1e-4, None).unwrap();
    assert_abs_diff_eq!(e.action, -1.0, epsilon = 1e-2);
}

#[test]
fn gradient_matches_finite_differences() {
    let pol = policy().with_tol(1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let tau = 1e-2;
    for _ in 0..10 {
        let s = rng.random_range(-0.1..1.1);
        let th = [rng.random_range(0.5..10.0), rng.random_range(0.5..10.0)];
        let e = pol.evaluate(s, &PolicyParams(th), tau, None).unwrap();
        let fd = fd_gradient(&pol, s, th, tau);
        let err = (e.gradient[0] - fd[0]).hypot(e.gradient[1] - fd[1]);
        let scale = fd[0].hypot(fd[1]).max(1e-3);
        assert!(err / scale <= 1e-4, "s {s} θ {th:?}: {:?} vs {fd:?}", e.gradient);
    }
}

#[test]
fn state_derivative_matches_finite_differences() {
    let pol = policy().with_tol(1e-12);
    let th = PolicyParams([6.0, 3.0]);
    let h = 1e-6;
    for s in [0.05, 0.3, 0.52, 0.8] {
        let e = pol.evaluate(s, &th, 1e-2, None).unwrap();
        let d = pol.state_derivative(&e, s, &th, 1e-2).unwrap();
        let fd = (pol.action(s + h, &th, 1e-2, None).unwrap().0 - pol.action(s - h, &th, 1e-2, None).unwrap().0)
            / (2.0 * h);
        assert!((d - fd).abs() <= 1e-4 * fd.abs().max(1.0), "s {s}: {d} vs {fd}");
    }
}

#[test]
fn warm_and_cold_starts_agree() {
    let pol = policy();
    let th = PolicyParams([7.0, 3.0]);
    for tau in [1e-2, 1e-4] {
        let mut warm = None;
        for s in grid(-0.1, 1.1, 25) {
            let cold = pol.evaluate(s, &th, tau, None).unwrap();
            let hot = pol.evaluate(s, &th, tau, warm.as_ref()).unwrap();
            assert!((cold.action - hot.action).abs() <= 1e-7, "s {s} tau {tau}");
            warm = Some(hot.solution);
        }
    }
}

#[test]
fn actions_respect_input_bounds() {
    let pol = policy();
    for th in [[0.0, 0.0], [3.0, 3.0], [7.0, 3.0], [10.0, 10.0], [-4.0, 2.0]] {
        for tau in [1e-2, 1e-4] {
            for p in pol.smoothness_profile(&PolicyParams(th), tau, &grid(-0.3, 1.3, 81)) {
                let (u, g) = p.result.unwrap();
                assert!((-1.0 - 1e-6..=1.0 + 1e-6).contains(&u));
                assert!(g.iter().all(|v| v.is_finite()));
            }
        }
    }
}

fn profile_slope(pol: &MpcPolicy<f64>, th: [f64; 2], tau: f64, pts: &[f64]) -> f64 {
    let u: Vec<f64> = pol
        .smoothness_profile(&PolicyParams(th), tau, pts)
        .into_iter()
        .map(|p| p.result.unwrap().0)
        .collect();
    u.windows(2)
        .zip(pts.windows(2))
        .map(|(a, s)| (a[1] - a[0]).abs() / (s[1] - s[0]))
        .fold(0.0, f64::max)
}

fn max_gradient(pol: &MpcPolicy<f64>, th: [f64; 2], tau: f64, pts: &[f64]) -> f64 {
    pol.smoothness_profile(&PolicyParams(th), tau, pts)
        .into_iter()
        .map(|p| {
            let g = p.result.unwrap().1;
            g[0].hypot(g[1])
        })
        .fold(0.0, f64::max)
}

#[test]
fn larger_tau_gives_flatter_policy() {
    let pol = policy();
    let pts = grid(0.0, 1.0, 501);
    for th in [[3.0, 3.0], [7.0, 3.0], [10.0, 10.0], [0.0, 0.0]] {
        let smooth = profile_slope(&pol, th, 1e-2, &pts);
        let sharp = profile_slope(&pol, th, 1e-4, &pts);
        assert!(smooth < sharp, "θ {th:?}: {smooth} vs {sharp}");
    }
}

#[test]
fn gradient_magnitude_shrinks_as_tau_grows() {
    let pol = policy();
    let pts = grid(0.0, 1.0, 401);
    for th in [[3.0, 3.0], [5.0, 5.0], [7.0, 3.0], [10.0, 10.0]] {
        let m: Vec<f64> = [1e-4, 1e-3, 1e-2].iter().map(|&t| max_gradient(&pol, th, t, &pts)).collect();
        assert!(m[0] >= m[1] && m[1] >= m[2], "θ {th:?}: {m:?}");
    }
}

#[test]
fn smoothed_policy_is_lipschitz_in_state() {
    // regression bound measured on a 1e-3 grid; slopes peak just under 1/α = 12
    const K: f64 = 12.5;
    let pol = policy();
    let pts = grid(-0.2, 1.2, 1401);
    for th in [[0.0, 0.0], [3.0, 3.0], [7.0, 3.0], [10.0, 10.0], [50.0, 50.0]] {
        let k = profile_slope(&pol, th, 1e-2, &pts);
        assert!(k <= K, "θ {th:?}: slope {k}");
    }
}

#[test]
fn learned_region_policy_is_nonincreasing_in_state() {
    let pol = policy();
    for th in [[7.0, 3.0], [7.0, 2.0], [6.5, 3.0]] {
        for tau in [1e-2, 1e-4] {
            let u: Vec<f64> = pol
                .smoothness_profile(&PolicyParams(th), tau, &grid(0.0, 1.0, 201))
                .into_iter()
                .map(|p| p.result.unwrap().0)
                .collect();
            assert!(u.windows(2).all(|w| w[1] <= w[0] + 1e-7), "θ {th:?} τ {tau}");
        }
    }
}

#[test]
fn table_interpolates_and_holds_ends() {
    let pol = policy();
    let th = PolicyParams([7.0, 3.0]);
    let table = pol.tabulate(&th, 1e-3, 0.0, 1.0, 101).unwrap();
    assert_eq!(table.actions().len(), 101);
    let at = |s: f64| pol.action(s, &th, 1e-3, None).unwrap().0;
    assert_abs_diff_eq!(table.eval(0.3), at(0.3), epsilon = 1e-9);
    assert_abs_diff_eq!(table.eval(-5.0), at(0.0), epsilon = 1e-9);
    assert_abs_diff_eq!(table.eval(5.0), at(1.0), epsilon = 1e-9);
    let mid = table.eval(0.305);
    assert_abs_diff_eq!(mid, 0.5 * (at(0.30) + at(0.31)), epsilon = 1e-9);
}

#[test]
fn rejects_bad_tau_and_config() {
    let pol = policy();
    assert!(matches!(
        pol.evaluate(0.5, &PolicyParams([1.0, 1.0]), 0.0, None),
        Err(MpcError::InvalidTau)
    ));
    let cfg = MpcConfig::<f64> {
        horizon: 0,
        ..MpcConfig::default()
    };
    assert!(matches!(build_nlp(cfg, EnvParams::default().tariff()), Err(MpcError::InvalidConfig(_))));
    let cfg = MpcConfig::<f64> {
        slack_weight: 0.0,
        ..MpcConfig::default()
    };
    assert!(build_nlp(cfg, EnvParams::default().tariff()).is_err());
}

#[test]
fn single_precision_policy() {
    let pol = MpcPolicy::<f32>::new(MpcConfig::default(), EnvParams::default().tariff()).unwrap();
    let e = pol.evaluate(0.9f32, &PolicyParams([7.0, 3.0]), 1e-2, None).unwrap();
    let e64 = policy().evaluate(0.9, &PolicyParams([7.0, 3.0]), 1e-2, None).unwrap();
    assert!((e.action as f64 - e64.action).abs() < 1e-3);
}
