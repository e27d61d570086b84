//! Interior-point smoothed MPC policies with exact parametric sensitivities,
//! trained by an LSTD-based deterministic policy gradient on a stochastic
//! battery-storage problem.
//!
//! Numeric modules are generic over [`Real`]; the `f64` aliases below are
//! what the experiment driver and CLI use.

// `!(x > 0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod battery;
pub mod dp;
pub mod experiment;
pub mod ipm;
pub mod mpc;
pub mod real;
pub mod rl;

pub use real::Real;

pub type Env = battery::EnvParams<f64>;
pub type Policy = mpc::MpcPolicy<f64>;
pub type PolicyParams = mpc::PolicyParams<f64>;
pub type MpcConfig = mpc::MpcConfig<f64>;
pub type DpSolution = dp::DpSolution<f64>;
pub type LearnerConfig = rl::LearnerConfig<f64>;
pub type CriticParams = rl::CriticParams<f64>;
pub type PrimalDualPoint = ipm::PrimalDualPoint<f64>;
