//! Small closed-form problems used to check the kernel.

use nalgebra::{DMatrix, DVector};

use super::{NlpDims, ParametricNlp, PrimalDualPoint};
use crate::real::{c, Real};

/// `min z²  s.t.  1 - z ≤ 0`.
///
/// Exact solution `z* = 1, μ* = 2`; the relaxed solution is
/// `z_τ = (1 + √(1 + 2τ)) / 2`, `μ_τ = 2 z_τ`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LowerBoundedSquare;

impl LowerBoundedSquare {
    pub fn relaxed_solution<T: Real>(tau: T) -> T {
        (T::one() + (T::one() + c::<T>(2.0) * tau).sqrt()) * c(0.5)
    }
}

impl<T: Real> ParametricNlp<T> for LowerBoundedSquare {
    fn dims(&self) -> NlpDims {
        NlpDims {
            n_z: 1,
            n_g: 0,
            n_h: 1,
            n_theta: 0,
            n_s: 0,
        }
    }

    fn cost(&self, z: &DVector<T>, _theta: &DVector<T>) -> T {
        z[0] * z[0]
    }

    fn cost_gradient(&self, z: &DVector<T>, _theta: &DVector<T>) -> DVector<T> {
        DVector::from_element(1, c::<T>(2.0) * z[0])
    }

    fn equalities(&self, _z: &DVector<T>, _s: &DVector<T>, _theta: &DVector<T>) -> DVector<T> {
        DVector::zeros(0)
    }

    fn equality_jacobian(
        &self,
        _z: &DVector<T>,
        _s: &DVector<T>,
        _theta: &DVector<T>,
    ) -> DMatrix<T> {
        DMatrix::zeros(0, 1)
    }

    fn inequalities(&self, z: &DVector<T>, _theta: &DVector<T>) -> DVector<T> {
        DVector::from_element(1, T::one() - z[0])
    }

    fn inequality_jacobian(&self, _z: &DVector<T>, _theta: &DVector<T>) -> DMatrix<T> {
        DMatrix::from_element(1, 1, -T::one())
    }

    fn lagrangian_hessian(
        &self,
        _z: &DVector<T>,
        _lambda: &DVector<T>,
        _mu: &DVector<T>,
        _theta: &DVector<T>,
    ) -> DMatrix<T> {
        DMatrix::from_element(1, 1, c(2.0))
    }

    fn residual_theta_jacobian(
        &self,
        _y: &PrimalDualPoint<T>,
        _s: &DVector<T>,
        _theta: &DVector<T>,
    ) -> DMatrix<T> {
        DMatrix::zeros(2, 0)
    }

    fn residual_state_jacobian(
        &self,
        _y: &PrimalDualPoint<T>,
        _s: &DVector<T>,
        _theta: &DVector<T>,
    ) -> DMatrix<T> {
        DMatrix::zeros(2, 0)
    }

    fn initial_primal(&self, _s: &DVector<T>, _theta: &DVector<T>) -> DVector<T> {
        DVector::from_element(1, c(2.0))
    }
}

/// `min (z - θ)²  s.t.  z - 1 ≤ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct UpperBoundedTracking;

impl<T: Real> ParametricNlp<T> for UpperBoundedTracking {
    fn dims(&self) -> NlpDims {
        NlpDims {
            n_z: 1,
            n_g: 0,
            n_h: 1,
            n_theta: 1,
            n_s: 0,
        }
    }

    fn cost(&self, z: &DVector<T>, theta: &DVector<T>) -> T {
        let d = z[0] - theta[0];
        d * d
    }

    fn cost_gradient(&self, z: &DVector<T>, theta: &DVector<T>) -> DVector<T> {
        DVector::from_element(1, c::<T>(2.0) * (z[0] - theta[0]))
    }

    fn equalities(&self, _z: &DVector<T>, _s: &DVector<T>, _theta: &DVector<T>) -> DVector<T> {
        DVector::zeros(0)
    }

    fn equality_jacobian(
        &self,
        _z: &DVector<T>,
        _s: &DVector<T>,
        _theta: &DVector<T>,
    ) -> DMatrix<T> {
        DMatrix::zeros(0, 1)
    }

    fn inequalities(&self, z: &DVector<T>, _theta: &DVector<T>) -> DVector<T> {
        DVector::from_element(1, z[0] - T::one())
    }

    fn inequality_jacobian(&self, _z: &DVector<T>, _theta: &DVector<T>) -> DMatrix<T> {
        DMatrix::from_element(1, 1, T::one())
    }

    fn lagrangian_hessian(
        &self,
        _z: &DVector<T>,
        _lambda: &DVector<T>,
        _mu: &DVector<T>,
        _theta: &DVector<T>,
    ) -> DMatrix<T> {
        DMatrix::from_element(1, 1, c(2.0))
    }

    fn residual_theta_jacobian(
        &self,
        _y: &PrimalDualPoint<T>,
        _s: &DVector<T>,
        _theta: &DVector<T>,
    ) -> DMatrix<T> {
        // ∂/∂θ of 2(z - θ); the complementarity row is θ-free
        DMatrix::from_column_slice(2, 1, &[c(-2.0), T::zero()])
    }

    fn residual_state_jacobian(
        &self,
        _y: &PrimalDualPoint<T>,
        _s: &DVector<T>,
        _theta: &DVector<T>,
    ) -> DMatrix<T> {
        DMatrix::zeros(2, 0)
    }

    fn initial_primal(&self, _s: &DVector<T>, _theta: &DVector<T>) -> DVector<T> {
        DVector::from_element(1, T::zero())
    }
}

/// `min ½ θ² z₀² + ½ z₁²  s.t.  z₀ + z₁ = s`, no inequalities.
#[derive(Debug, Clone, Copy, Default)]
pub struct EqualityQp;

impl<T: Real> ParametricNlp<T> for EqualityQp {
    fn dims(&self) -> NlpDims {
        NlpDims {
            n_z: 2,
            n_g: 1,
            n_h: 0,
            n_theta: 1,
            n_s: 1,
        }
    }

    fn cost(&self, z: &DVector<T>, theta: &DVector<T>) -> T {
        c::<T>(0.5) * (theta[0] * theta[0] * z[0] * z[0] + z[1] * z[1])
    }

    fn cost_gradient(&self, z: &DVector<T>, theta: &DVector<T>) -> DVector<T> {
        DVector::from_column_slice(&[theta[0] * theta[0] * z[0], z[1]])
    }

    fn equalities(&self, z: &DVector<T>, s: &DVector<T>, _theta: &DVector<T>) -> DVector<T> {
        DVector::from_element(1, z[0] + z[1] - s[0])
    }

    fn equality_jacobian(
        &self,
        _z: &DVector<T>,
        _s: &DVector<T>,
        _theta: &DVector<T>,
    ) -> DMatrix<T> {
        DMatrix::from_element(1, 2, T::one())
    }

    fn inequalities(&self, _z: &DVector<T>, _theta: &DVector<T>) -> DVector<T> {
        DVector::zeros(0)
    }

    fn inequality_jacobian(&self, _z: &DVector<T>, _theta: &DVector<T>) -> DMatrix<T> {
        DMatrix::zeros(0, 2)
    }

    fn lagrangian_hessian(
        &self,
        _z: &DVector<T>,
        _lambda: &DVector<T>,
        _mu: &DVector<T>,
        theta: &DVector<T>,
    ) -> DMatrix<T> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&[theta[0] * theta[0], T::one()]))
    }

    fn residual_theta_jacobian(
        &self,
        y: &PrimalDualPoint<T>,
        _s: &DVector<T>,
        theta: &DVector<T>,
    ) -> DMatrix<T> {
        DMatrix::from_column_slice(3, 1, &[c::<T>(2.0) * theta[0] * y.z[0], T::zero(), T::zero()])
    }

    fn residual_state_jacobian(
        &self,
        _y: &PrimalDualPoint<T>,
        _s: &DVector<T>,
        _theta: &DVector<T>,
    ) -> DMatrix<T> {
        DMatrix::from_column_slice(3, 1, &[T::zero(), T::zero(), -T::one()])
    }

    fn initial_primal(&self, s: &DVector<T>, _theta: &DVector<T>) -> DVector<T> {
        DVector::from_column_slice(&[s[0], T::zero()])
    }
}
