//! LSTD compatible critic, deterministic policy gradient actor and the
//! barrier homotopy schedule.

mod actor;
mod critic;
mod learner;

use thiserror::Error;

pub use actor::{actor_step, policy_gradient_estimate, tau_step, TauSchedule};
pub use critic::{
    compatible_features, compatible_from_gradient, features, lstd_fit, lstd_system,
    td_fixed_point_residual, td_rms_error, CriticParams, CriticSample,
};
pub use learner::{
    collect_batch, eval_seed, gradient_density, run_learning, small_gradient_fraction, Batch,
    DensitySample, LearnerConfig, LearnerState, LearningTrace, TraceRow,
};

#[derive(Debug, Error)]
pub enum RlError {
    #[error("batch of {got} samples is too small for a {need}-dimensional critic")]
    BatchTooSmall { got: usize, need: usize },
    #[error("LSTD system is singular (ridge {ridge:e})")]
    SingularCritic { ridge: f64 },
    #[error("invalid learner configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("aborted after {failures} failures at step {step}: {last}")]
    TooManyFailures {
        failures: usize,
        step: usize,
        last: String,
        trace: Box<LearningTrace>,
    },
    #[error(transparent)]
    Policy(#[from] crate::mpc::MpcError),
}
