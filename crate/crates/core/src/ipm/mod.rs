//! Primal-dual interior-point kernel for parametric NLPs of the form
//!
//! ```text
//! min_z  Ψ_θ(z)   s.t.  G_θ(z, s) = 0,  H_θ(z) ≤ 0
//! ```
//!
//! The kernel solves the barrier-relaxed KKT system at a caller-supplied
//! barrier parameter `τ` and differentiates the relaxed solution with
//! respect to the parameters through the implicit function theorem.
//! `τ` is never driven to zero internally: it is part of the definition
//! of the smoothed solution map.

mod fixtures;
mod kkt;
mod nlp;
mod sensitivity;
mod solver;

use nalgebra::DVector;
use thiserror::Error;

use crate::real::Real;

pub use fixtures::{EqualityQp, LowerBoundedSquare, UpperBoundedTracking};
pub use kkt::{kkt_jacobian, kkt_residual};
pub use nlp::{KktSparsity, NlpDims, ParametricNlp};
pub use sensitivity::{sensitivity, state_sensitivity};
pub use solver::{solve, solve_observed, SolveOptions, SolveReport};

/// Row block of the relaxed KKT residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KktBlock {
    /// `∇_z L`
    Stationarity,
    /// `G(z, s)`
    Equality,
    /// `diag(μ) H(z) + τ 1`
    Complementarity,
}

impl std::fmt::Display for KktBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            KktBlock::Stationarity => "stationarity",
            KktBlock::Equality => "equality",
            KktBlock::Complementarity => "complementarity",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IpmError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in the {0} block")]
    NonFinite(KktBlock),
    #[error("invalid solve options: {0}")]
    InvalidOptions(&'static str),
    #[error("warm start is not strictly interior (need μ > 0 and H(z) < 0)")]
    NotInterior,
    #[error("KKT matrix singular after regularization {regularization:e} (pivot ratio {pivot_ratio:e})")]
    SolverFailure {
        regularization: f64,
        pivot_ratio: f64,
    },
    #[error("sensitivity unavailable: KKT Jacobian singular (condition estimate {condition:e})")]
    SensitivityUnavailable { condition: f64 },
}

/// Primal-dual point `y = {z, λ, μ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualPoint<T: Real> {
    pub z: DVector<T>,
    pub lambda: DVector<T>,
    pub mu: DVector<T>,
}

impl<T: Real> PrimalDualPoint<T> {
    pub fn new(z: DVector<T>, lambda: DVector<T>, mu: DVector<T>) -> Self {
        Self { z, lambda, mu }
    }

    pub fn zeros(dims: &NlpDims) -> Self {
        Self {
            z: DVector::zeros(dims.n_z),
            lambda: DVector::zeros(dims.n_g),
            mu: DVector::zeros(dims.n_h),
        }
    }

    pub fn len(&self) -> usize {
        self.z.len() + self.lambda.len() + self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stacks `[z; λ; μ]`.
    pub fn to_vector(&self) -> DVector<T> {
        let mut v = DVector::zeros(self.len());
        let (nz, ng) = (self.z.len(), self.lambda.len());
        v.rows_mut(0, nz).copy_from(&self.z);
        v.rows_mut(nz, ng).copy_from(&self.lambda);
        v.rows_mut(nz + ng, self.mu.len()).copy_from(&self.mu);
        v
    }

    /// Splits a stacked `[z; λ; μ]` vector.
    pub fn from_vector(v: &DVector<T>, dims: &NlpDims) -> Self {
        assert_eq!(v.len(), dims.n_y(), "stacked primal-dual length");
        Self {
            z: v.rows(0, dims.n_z).into_owned(),
            lambda: v.rows(dims.n_z, dims.n_g).into_owned(),
            mu: v.rows(dims.n_z + dims.n_g, dims.n_h).into_owned(),
        }
    }
}
