//! Ground-truth optimal policy of the battery MDP by value iteration on a
//! discretized state/action grid, plus Monte-Carlo policy evaluation.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::battery::EnvParams;
use crate::real::{c, Real};

#[derive(Debug, Error)]
pub enum DpError {
    #[error("invalid DP grid: {0}")]
    InvalidGrid(&'static str),
    #[error("value iteration did not reach tolerance {tol:e} within {sweeps} sweeps (residual {residual:e})")]
    NotConverged {
        tol: f64,
        sweeps: usize,
        residual: f64,
    },
    #[error("environment: {0}")]
    Env(#[from] crate::battery::EnvError),
    #[error("csv export: {0}")]
    Io(#[from] std::io::Error),
}

/// Gauss–Hermite rule for a standard normal variable (Golub–Welsch).
///
/// Returns nodes in increasing order and weights summing to one.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature needs at least one node");
    // Jacobi matrix of the probabilists' Hermite polynomials
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jac[(k - 1, k)] = b;
        jac[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    // symmetrize to kill eigen-solver asymmetry
    let mut nodes: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut weights: Vec<f64> = pairs.iter().map(|p| p.1 / total).collect();
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        nodes[i] = -x;
        nodes[j] = x;
        let w = 0.5 * (weights[i] + weights[j]);
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    (nodes, weights)
}

/// Grid sizes for [`DpGrid::new`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpGridConfig<T> {
    pub state_nodes: usize,
    pub state_lo: T,
    pub state_hi: T,
    pub action_nodes: usize,
    pub quadrature_nodes: usize,
    pub discount: T,
}

impl<T: Real> Default for DpGridConfig<T> {
    fn default() -> Self {
        Self {
            state_nodes: 401,
            state_lo: c(-0.25),
            state_hi: c(1.25),
            action_nodes: 41,
            quadrature_nodes: 11,
            discount: c(0.9985),
        }
    }
}

/// State/action nodes, noise quadrature and discount.
#[derive(Debug, Clone, PartialEq)]
pub struct DpGrid<T> {
    pub states: Vec<T>,
    /// Action nodes in tie-break preference order: smallest `|a|` first, negative before positive.
    pub actions: Vec<T>,
    /// Realizations of `Δ`.
    pub noise_nodes: Vec<T>,
    pub noise_weights: Vec<T>,
    pub discount: T,
}

impl<T: Real> DpGrid<T> {
    pub fn new(env: &EnvParams<T>, cfg: &DpGridConfig<T>) -> Result<Self, DpError> {
        env.validate()?;
        if !(cfg.discount > T::zero() && cfg.discount < T::one()) {
            return Err(DpError::InvalidGrid("discount must lie in (0, 1)"));
        }
        if cfg.state_nodes < 3 || cfg.action_nodes < 1 || cfg.quadrature_nodes < 1 {
            return Err(DpError::InvalidGrid("too few nodes"));
        }
        if !(cfg.state_lo < T::zero() && cfg.state_hi > T::one()) {
            return Err(DpError::InvalidGrid("state range must strictly contain [0, 1]"));
        }
        let ns = cfg.state_nodes;
        let h = (cfg.state_hi - cfg.state_lo) / c::<T>((ns - 1) as f64);
        let states = (0..ns)
            .map(|i| cfg.state_lo + h * c::<T>(i as f64))
            .collect();

        let na = cfg.action_nodes;
        let mut actions: Vec<T> = if na == 1 {
            vec![T::zero()]
        } else {
            let da = c::<T>(2.0) * env.u_max / c::<T>((na - 1) as f64);
            (0..na)
                .map(|j| -env.u_max + da * c::<T>(j as f64))
                .collect()
        };
        // exact zero when the grid is symmetric with an odd node count
        if na % 2 == 1 {
            actions[na / 2] = T::zero();
        }
        actions.sort_by(|a, b| {
            a.abs()
                .partial_cmp(&b.abs())
                .unwrap()
                .then(a.partial_cmp(b).unwrap())
        });

        let (x, w) = gauss_hermite(cfg.quadrature_nodes);
        let std = env.noise_std();
        let noise_nodes = x.iter().map(|&v| env.noise_mean + std * c(v)).collect();
        let noise_weights = w.iter().map(|&v| c(v)).collect();
        Ok(Self {
            states,
            actions,
            noise_nodes,
            noise_weights,
            discount: cfg.discount,
        })
    }

    pub fn spacing(&self) -> T {
        self.states[1] - self.states[0]
    }

    /// Interval index and (possibly extrapolating) coordinate of `s`.
    #[inline]
    fn locate(&self, s: T) -> (usize, T) {
        let n = self.states.len();
        let pos = (s - self.states[0]) / self.spacing();
        let k = if pos <= T::zero() {
            0
        } else {
            pos.floor().to_usize().unwrap_or(n - 2).min(n - 2)
        };
        (k, pos - c::<T>(k as f64))
    }

    /// Piecewise-linear interpolation of nodal `values`; linear extrapolation
    /// of the end slopes outside the grid.
    pub fn interpolate(&self, values: &[T], s: T) -> T {
        let (k, t) = self.locate(s);
        values[k] * (T::one() - t) + values[k + 1] * t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpSolution<T> {
    pub states: Vec<T>,
    pub values: Vec<T>,
    pub policy: Vec<T>,
    /// Sup-norm update of the last sweep.
    pub residual: T,
    pub sweeps: usize,
}

/// Bellman sweeps `V ← min_a Σ_q w_q [L̃(s, a) + γ V(s + α(Δ_q + a))]` until the
/// sup-norm update is at most `tol`. Ties go to the smallest `|a|`, then the negative one.
pub fn value_iteration<T: Real>(
    env: &EnvParams<T>,
    grid: &DpGrid<T>,
    tol: T,
    max_sweeps: usize,
) -> Result<DpSolution<T>, DpError> {
    if !(tol > T::zero()) {
        return Err(DpError::InvalidGrid("tolerance must be positive"));
    }
    if !(grid.discount < T::one()) {
        return Err(DpError::InvalidGrid("discount must be below one"));
    }
    let ns = grid.states.len();
    let na = grid.actions.len();
    let nq = grid.noise_nodes.len();

    // (s, a, q) -> (left node, interpolation weight); the dynamics are fixed
    let mut stencil = Vec::with_capacity(ns * na * nq);
    let mut stage = Vec::with_capacity(ns * na);
    for &s in &grid.states {
        for &a in &grid.actions {
            stage.push(env.rl_stage_cost(s, a));
            for (&d, &w) in grid.noise_nodes.iter().zip(&grid.noise_weights) {
                let next = s + env.alpha * (d + a);
                let (k, t) = grid.locate(next);
                stencil.push((k, w * (T::one() - t), w * t));
            }
        }
    }

    let gamma = grid.discount;
    let tie = c::<T>(1e-12);
    let mut values = vec![T::zero(); ns];
    let mut next = vec![T::zero(); ns];
    let mut policy = vec![T::zero(); ns];
    let mut residual = T::zero();
    for sweep in 1..=max_sweeps {
        residual = T::zero();
        for i in 0..ns {
            let mut best = T::zero();
            let mut best_a = T::zero();
            for j in 0..na {
                let base = (i * na + j) * nq;
                let mut ev = T::zero();
                for &(k, wl, wr) in &stencil[base..base + nq] {
                    ev += wl * values[k] + wr * values[k + 1];
                }
                let q = stage[i * na + j] + gamma * ev;
                if j == 0 || q < best - tie * (T::one() + best.abs()) {
                    best = q;
                    best_a = grid.actions[j];
                }
            }
            next[i] = best;
            policy[i] = best_a;
            residual = residual.max((best - values[i]).abs());
        }
        std::mem::swap(&mut values, &mut next);
        if residual <= tol {
            return Ok(DpSolution {
                states: grid.states.clone(),
                values,
                policy,
                residual,
                sweeps: sweep,
            });
        }
    }
    Err(DpError::NotConverged {
        tol: tol.to_f64_lossy(),
        sweeps: max_sweeps,
        residual: residual.to_f64_lossy(),
    })
}

impl<T: Real> DpSolution<T> {
    /// Nearest-node lookup of `π*`. The flag is set when `s` lay outside the grid.
    pub fn optimal_action(&self, s: T) -> (T, bool) {
        let n = self.states.len();
        let lo = self.states[0];
        let hi = self.states[n - 1];
        let clamped = s < lo || s > hi;
        let h = (hi - lo) / c::<T>((n - 1) as f64);
        let pos = ((s.max(lo).min(hi) - lo) / h).round();
        let k = pos.to_usize().unwrap_or(0).min(n - 1);
        (self.policy[k], clamped)
    }

    pub fn value(&self, s: T) -> T {
        let n = self.states.len();
        let h = self.states[1] - self.states[0];
        let pos = (s - self.states[0]) / h;
        let k = if pos <= T::zero() {
            0
        } else {
            pos.floor().to_usize().unwrap_or(n - 2).min(n - 2)
        };
        let t = pos - c::<T>(k as f64);
        self.values[k] * (T::one() - t) + self.values[k + 1] * t
    }

    /// Writes `s,V,pi` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<usize, DpError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["s", "V", "pi"]).map_err(csv_io)?;
        for ((s, v), p) in self.states.iter().zip(&self.values).zip(&self.policy) {
            w.write_record([
                fmt_f64(s.to_f64_lossy()),
                fmt_f64(v.to_f64_lossy()),
                fmt_f64(p.to_f64_lossy()),
            ])
            .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(self.states.len())
    }
}

fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Monte-Carlo estimate of the discounted penalized cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Performance<T> {
    pub mean: T,
    pub std_error: T,
    pub rollouts: usize,
}

/// Settings for [`policy_performance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutConfig<T> {
    pub discount: T,
    pub rollouts: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl<T: Real> RolloutConfig<T> {
    /// `γ^horizon`, the truncated tail weight.
    pub fn truncation_weight(&self) -> T {
        let mut g = T::one();
        for _ in 0..self.horizon {
            g *= self.discount;
        }
        g
    }
}

/// Mean discounted cost of `policy` over seeded rollouts from `s₀ ~ U[0, 1]`.
///
/// Rollout `r` uses noise stream `r` of `cfg.seed`, so two policies evaluated
/// with the same config see common random numbers. Actions are clamped into bounds.
pub fn policy_performance<T: Real, P: FnMut(T) -> T>(
    mut policy: P,
    env: &EnvParams<T>,
    cfg: &RolloutConfig<T>,
) -> Performance<T> {
    assert!(cfg.rollouts >= 1, "need at least one rollout");
    let mut totals = Vec::with_capacity(cfg.rollouts);
    for r in 0..cfg.rollouts {
        let mut noise = env.noise_stream(cfg.seed, r as u64);
        let mut s = noise.uniform(T::zero(), T::one());
        let mut disc = T::one();
        let mut total = T::zero();
        for _ in 0..cfg.horizon {
            let a = env.clamp_action(policy(s));
            total += disc * env.rl_stage_cost(s, a);
            let d = noise.sample();
            s = env.step(s, a, d);
            disc *= cfg.discount;
        }
        totals.push(total);
    }
    let n = c::<T>(cfg.rollouts as f64);
    let mean = totals.iter().fold(T::zero(), |acc, &v| acc + v) / n;
    let std_error = if cfg.rollouts > 1 {
        let var = totals
            .iter()
            .fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean))
            / (n - T::one());
        (var / n).sqrt()
    } else {
        T::zero()
    };
    Performance {
        mean,
        std_error,
        rollouts: cfg.rollouts,
    }
}
