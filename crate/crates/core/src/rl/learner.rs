use nalgebra::Vector2;

use super::actor::{actor_step, policy_gradient_estimate, tau_step, TauSchedule};
use super::critic::{
    compatible_from_gradient, lstd_fit, td_rms_error, CriticParams, CriticSample,
};
use super::RlError;
use crate::battery::{EnvParams, NoiseStream, Transition};
use crate::dp::{policy_performance, RolloutConfig};
use crate::ipm::PrimalDualPoint;
use crate::mpc::{MpcPolicy, PolicyParams};
use crate::real::{c, Real};

/// Learner hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig<T> {
    pub steps: usize,
    /// Transitions collected per RL step.
    pub batch_size: usize,
    pub learning_rate: T,
    /// Ceiling on the gradient norm before the actor step.
    pub grad_clip: T,
    /// Standard deviation of the additive Gaussian exploration.
    pub exploration_std: T,
    pub ridge: T,
    /// Discount of the MDP, used by the critic and the performance estimate.
    pub discount: T,
    pub initial_theta: [T; 2],
    pub initial_state: T,
    pub schedule: TauSchedule<T>,
    /// Performance is re-estimated every `eval_every` steps and carried forward in between.
    pub eval_every: usize,
    pub eval_rollouts: usize,
    pub eval_horizon: usize,
    /// Nodes of the tabulated policy used for performance rollouts.
    pub table_points: usize,
    pub table_lo: T,
    pub table_hi: T,
    /// Total tolerated policy-evaluation plus critic-fit failures.
    pub max_failures: usize,
}

impl<T: Real> Default for LearnerConfig<T> {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_size: 200,
            learning_rate: c(0.03),
            grad_clip: c(10.0),
            exploration_std: c(0.1),
            ridge: c(1e-8),
            discount: c(0.9985),
            initial_theta: [c(5.5), c(3.0)],
            initial_state: c(0.5),
            schedule: TauSchedule {
                initial: c(1e-2),
                step: c(5e-5),
                floor: c(1e-4),
            },
            eval_every: 10,
            eval_rollouts: 64,
            eval_horizon: 6200,
            table_points: 801,
            table_lo: c(-0.3),
            table_hi: c(1.3),
            max_failures: 1000,
        }
    }
}

impl<T: Real> LearnerConfig<T> {
    pub fn validate(&self) -> Result<(), RlError> {
        self.schedule.validate()?;
        if self.batch_size < 5 {
            return Err(RlError::InvalidConfig("batch_size must be at least 5"));
        }
        if !(self.learning_rate >= T::zero()) {
            return Err(RlError::InvalidConfig("learning_rate must be nonnegative"));
        }
        if !(self.grad_clip > T::zero()) {
            return Err(RlError::InvalidConfig("grad_clip must be positive"));
        }
        if !(self.exploration_std >= T::zero()) {
            return Err(RlError::InvalidConfig("exploration_std must be nonnegative"));
        }
        if !(self.ridge >= T::zero()) {
            return Err(RlError::InvalidConfig("ridge must be nonnegative"));
        }
        if !(self.discount > T::zero() && self.discount < T::one()) {
            return Err(RlError::InvalidConfig("discount must lie in (0, 1)"));
        }
        if self.eval_every == 0 || self.eval_rollouts == 0 || self.eval_horizon == 0 {
            return Err(RlError::InvalidConfig("performance evaluation settings must be positive"));
        }
        if self.table_points < 2 || !(self.table_hi > self.table_lo) {
            return Err(RlError::InvalidConfig("policy table needs two nodes and hi > lo"));
        }
        Ok(())
    }
}

/// Actor, critic and homotopy state between RL steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState<T: Real> {
    pub theta: PolicyParams<T>,
    pub critic: CriticParams<T>,
    pub tau: T,
    pub step: usize,
    pub learning_rate: T,
    pub exploration_std: T,
    pub grad_clip: T,
    pub seed: u64,
}

/// Transitions of one RL step with the policy gradient at each visited state.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T: Real> {
    pub transitions: Vec<Transition<T>>,
    /// `(π(s_k), ∇_θπ(s_k))` for each transition.
    pub policy: Vec<(T, [T; 2])>,
    /// States where the policy could not be evaluated; their transitions are not recorded.
    pub skipped: usize,
    pub last_error: Option<String>,
}

impl<T: Real> Batch<T> {
    pub fn critic_samples(&self) -> Vec<CriticSample<T>> {
        self.transitions
            .iter()
            .zip(&self.policy)
            .map(|(tr, (pi, g))| {
                CriticSample::new(compatible_from_gradient(*g, *pi, tr.a), tr.s, tr.next_s, tr.cost)
            })
            .collect()
    }

    pub fn gradients(&self) -> Vec<[T; 2]> {
        self.policy.iter().map(|p| p.1).collect()
    }
}

/// Closed-loop simulation state carried across batches.
struct Rollout<T: Real> {
    s: T,
    noise: NoiseStream<T>,
    exploration: NoiseStream<T>,
    warm: Option<PrimalDualPoint<T>>,
}

impl<T: Real> Rollout<T> {
    fn new(env: &EnvParams<T>, s0: T, seed: u64, exploration_std: T) -> Self {
        Self {
            s: s0,
            noise: env.noise_stream(seed, 0),
            exploration: NoiseStream::new(seed, 1, T::zero(), exploration_std),
            warm: None,
        }
    }
}

fn collect<T: Real>(
    env: &EnvParams<T>,
    policy: &MpcPolicy<T>,
    theta: &PolicyParams<T>,
    tau: T,
    len: usize,
    ro: &mut Rollout<T>,
) -> Batch<T> {
    let mut batch = Batch {
        transitions: Vec::with_capacity(len),
        policy: Vec::with_capacity(len),
        skipped: 0,
        last_error: None,
    };
    for _ in 0..len {
        let e = ro.exploration.sample();
        let noise = ro.noise.sample();
        let s = ro.s;
        match policy.evaluate(s, theta, tau, ro.warm.as_ref()) {
            Ok(ev) => {
                let a = env.clamp_action(ev.action + e);
                let next_s = env.step(s, a, noise);
                batch.transitions.push(Transition {
                    s,
                    a,
                    noise,
                    cost: env.rl_stage_cost(s, a),
                    next_s,
                    exploration: e,
                });
                batch.policy.push((ev.action, ev.gradient));
                ro.warm = Some(ev.solution);
                ro.s = next_s;
            }
            Err(err) => {
                // keep the system moving with a neutral command
                batch.skipped += 1;
                batch.last_error = Some(err.to_string());
                ro.warm = None;
                let a = env.clamp_action(e);
                ro.s = env.step(s, a, noise);
            }
        }
    }
    batch
}

/// Collects `len` exploratory transitions from `s0` under `(θ, τ)`.
#[allow(clippy::too_many_arguments)]
pub fn collect_batch<T: Real>(
    env: &EnvParams<T>,
    policy: &MpcPolicy<T>,
    theta: &PolicyParams<T>,
    tau: T,
    s0: T,
    len: usize,
    exploration_std: T,
    seed: u64,
) -> Batch<T> {
    let mut ro = Rollout::new(env, s0, seed, exploration_std);
    collect(env, policy, theta, tau, len, &mut ro)
}

/// One logged RL step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub theta1: f64,
    pub theta2: f64,
    pub tau: f64,
    /// Most recent performance estimate (refreshed every `eval_every` steps).
    pub j: f64,
    pub j_se: f64,
    pub grad_norm: f64,
    /// RMS temporal-difference error of the fitted critic.
    pub critic_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningTrace {
    pub rows: Vec<TraceRow>,
    pub final_theta: [f64; 2],
    pub skipped_samples: usize,
    pub critic_failures: usize,
}

/// Estimates the discounted cost of the exploration-free policy at `(θ, τ)`
/// from a tabulated copy of it.
fn performance<T: Real>(
    env: &EnvParams<T>,
    policy: &MpcPolicy<T>,
    theta: &PolicyParams<T>,
    tau: T,
    cfg: &LearnerConfig<T>,
    seed: u64,
) -> Result<(T, T), RlError> {
    let table = policy.tabulate(theta, tau, cfg.table_lo, cfg.table_hi, cfg.table_points)?;
    let rc = RolloutConfig {
        discount: cfg.discount,
        rollouts: cfg.eval_rollouts,
        horizon: cfg.eval_horizon,
        seed,
    };
    let perf = policy_performance(|s| table.eval(s), env, &rc);
    Ok((perf.mean, perf.std_error))
}

/// Seed of the performance rollouts, shared by every evaluation of a run.
pub fn eval_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03)
}

/// Runs the actor-critic loop: collect a batch, fit the critic by LSTD,
/// estimate the policy gradient, step the actor, step `τ`.
pub fn run_learning<T: Real>(
    env: &EnvParams<T>,
    policy: &MpcPolicy<T>,
    cfg: &LearnerConfig<T>,
    seed: u64,
) -> Result<LearningTrace, RlError> {
    cfg.validate()?;
    let mut state = LearnerState {
        theta: PolicyParams(cfg.initial_theta),
        critic: CriticParams::default(),
        tau: cfg.schedule.initial,
        step: 0,
        learning_rate: cfg.learning_rate,
        exploration_std: cfg.exploration_std,
        grad_clip: cfg.grad_clip,
        seed,
    };
    let mut ro = Rollout::new(env, cfg.initial_state, seed, cfg.exploration_std);
    let perf_seed = eval_seed(seed);
    let mut rows = Vec::with_capacity(cfg.steps);
    let mut skipped = 0;
    let mut critic_failures = 0;
    let mut last_j = (f64::NAN, f64::NAN);

    for k in 0..cfg.steps {
        state.step = k;
        if k % cfg.eval_every == 0 {
            let (j, se) = performance(env, policy, &state.theta, state.tau, cfg, perf_seed)?;
            last_j = (j.to_f64_lossy(), se.to_f64_lossy());
        }

        let batch = collect(env, policy, &state.theta, state.tau, cfg.batch_size, &mut ro);
        skipped += batch.skipped;
        let samples = batch.critic_samples();
        let mut last_error = batch.last_error.clone();
        match lstd_fit(&samples, cfg.discount, cfg.ridge) {
            Ok(critic) => state.critic = critic,
            Err(e) => {
                critic_failures += 1;
                last_error = Some(e.to_string());
            }
        }
        let grad = policy_gradient_estimate(&batch.gradients(), &state.critic.w);
        let grad_norm = grad.norm();
        let residual = td_rms_error(&samples, &state.critic, cfg.discount);

        rows.push(TraceRow {
            step: k,
            theta1: state.theta.0[0].to_f64_lossy(),
            theta2: state.theta.0[1].to_f64_lossy(),
            tau: state.tau.to_f64_lossy(),
            j: last_j.0,
            j_se: last_j.1,
            grad_norm: grad_norm.to_f64_lossy(),
            critic_residual: residual.to_f64_lossy(),
        });

        if skipped + critic_failures > cfg.max_failures {
            let final_theta = [rows[k].theta1, rows[k].theta2];
            return Err(RlError::TooManyFailures {
                failures: skipped + critic_failures,
                step: k,
                last: last_error.unwrap_or_default(),
                trace: Box::new(LearningTrace {
                    rows,
                    final_theta,
                    skipped_samples: skipped,
                    critic_failures,
                }),
            });
        }

        let grad = if grad.iter().all(|g| g.is_finite()) {
            grad
        } else {
            Vector2::zeros()
        };
        let tau = state.tau;
        state = actor_step(&state, &grad);
        state.tau = tau_step(tau, &cfg.schedule);
    }

    Ok(LearningTrace {
        rows,
        final_theta: [state.theta.0[0].to_f64_lossy(), state.theta.0[1].to_f64_lossy()],
        skipped_samples: skipped,
        critic_failures,
    })
}

/// Per-sample policy-gradient contribution along a closed-loop trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensitySample<T> {
    pub step: usize,
    pub s: T,
    pub a: T,
    /// `∇_θ π(s)`
    pub gradient: [T; 2],
    /// `∇_θ π ∇_a A = ∇_θ π (∇_θ πᵀ w)`
    pub contribution: [T; 2],
    /// Contribution divided by the largest absolute component over the trace.
    pub normalized: [T; 2],
}

impl<T: Real> DensitySample<T> {
    /// Largest normalized component.
    pub fn magnitude(&self) -> T {
        self.normalized[0].abs().max(self.normalized[1].abs())
    }
}

/// Simulates `steps` exploratory transitions at fixed `(θ, τ)`, fits the
/// compatible critic on the whole trace and returns the normalized per-sample
/// gradient contributions.
#[allow(clippy::too_many_arguments)]
pub fn gradient_density<T: Real>(
    env: &EnvParams<T>,
    policy: &MpcPolicy<T>,
    theta: &PolicyParams<T>,
    tau: T,
    s0: T,
    steps: usize,
    exploration_std: T,
    discount: T,
    ridge: T,
    seed: u64,
) -> Result<Vec<DensitySample<T>>, RlError> {
    let batch = collect_batch(env, policy, theta, tau, s0, steps, exploration_std, seed);
    let critic = lstd_fit(&batch.critic_samples(), discount, ridge)?;
    let w = critic.w;
    let mut out: Vec<DensitySample<T>> = batch
        .transitions
        .iter()
        .zip(&batch.policy)
        .enumerate()
        .map(|(k, (tr, (_, g)))| {
            let gv = Vector2::new(g[0], g[1]);
            let contrib = gv * gv.dot(&w);
            DensitySample {
                step: k,
                s: tr.s,
                a: tr.a,
                gradient: *g,
                contribution: [contrib[0], contrib[1]],
                normalized: [T::zero(), T::zero()],
            }
        })
        .collect();
    let scale = out.iter().fold(T::zero(), |m, d| {
        m.max(d.contribution[0].abs()).max(d.contribution[1].abs())
    });
    if scale > T::zero() {
        for d in &mut out {
            d.normalized = [d.contribution[0] / scale, d.contribution[1] / scale];
        }
    }
    Ok(out)
}

/// Fraction of samples whose normalized magnitude is below `threshold`.
pub fn small_gradient_fraction<T: Real>(samples: &[DensitySample<T>], threshold: T) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let small = samples.iter().filter(|d| d.magnitude() < threshold).count();
    small as f64 / samples.len() as f64
}
