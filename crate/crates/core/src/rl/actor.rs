use nalgebra::Vector2;

use super::{LearnerState, RlError};
use crate::real::{c, Real};

/// `(1/M) Σ ∇_θπ ∇_θπᵀ w`: the policy gradient with the advantage slope
/// replaced by the compatible critic's `∇_a Q_w = ∇_θπᵀ w`.
pub fn policy_gradient_estimate<T: Real>(gradients: &[[T; 2]], w: &Vector2<T>) -> Vector2<T> {
    if gradients.is_empty() {
        return Vector2::zeros();
    }
    let sum = gradients.iter().fold(Vector2::zeros(), |acc, g| {
        let g = Vector2::new(g[0], g[1]);
        acc + g * g.dot(w)
    });
    sum / c::<T>(gradients.len() as f64)
}

/// Clipped gradient descent step `θ ← θ - lr·clip(g)`.
pub fn actor_step<T: Real>(state: &LearnerState<T>, gradient: &Vector2<T>) -> LearnerState<T> {
    let norm = gradient.norm();
    let g = if norm > state.grad_clip {
        gradient * (state.grad_clip / norm)
    } else {
        *gradient
    };
    let mut next = state.clone();
    next.theta.0[0] -= state.learning_rate * g[0];
    next.theta.0[1] -= state.learning_rate * g[1];
    next
}

/// Linear barrier decrease `τ ← max(τ - β, τ̄)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauSchedule<T> {
    pub initial: T,
    pub step: T,
    pub floor: T,
}

impl<T: Real> TauSchedule<T> {
    pub fn fixed(tau: T) -> Self {
        Self {
            initial: tau,
            step: T::zero(),
            floor: tau,
        }
    }

    pub fn validate(&self) -> Result<(), RlError> {
        if !(self.floor > T::zero()) {
            return Err(RlError::InvalidConfig("tau floor must be positive"));
        }
        if !(self.initial >= self.floor) {
            return Err(RlError::InvalidConfig("initial tau must be >= floor"));
        }
        if !(self.step >= T::zero()) {
            return Err(RlError::InvalidConfig("tau step must be nonnegative"));
        }
        Ok(())
    }
}

/// One homotopy step. Values within rounding of the floor snap to it, so
/// repeated subtraction lands on `τ̄` exactly.
pub fn tau_step<T: Real>(tau: T, sched: &TauSchedule<T>) -> T {
    let next = tau - sched.step;
    if next <= sched.floor + sched.step * c(1e-9) {
        sched.floor
    } else {
        next
    }
}
