use nalgebra::{DMatrix, DVector};

use super::PrimalDualPoint;
use crate::real::Real;

/// Problem dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NlpDims {
    pub n_z: usize,
    pub n_g: usize,
    pub n_h: usize,
    pub n_theta: usize,
    pub n_s: usize,
}

impl NlpDims {
    /// Length of the stacked primal-dual vector.
    pub fn n_y(&self) -> usize {
        self.n_z + self.n_g + self.n_h
    }
}

/// Structural nonzeros of `∂r/∂y` in coordinate form.
///
/// Only descriptive: linear solves are dense.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KktSparsity {
    pub dim: usize,
    pub entries: Vec<(usize, usize)>,
}

impl KktSparsity {
    pub fn dense(dim: usize) -> Self {
        let entries = (0..dim).flat_map(|i| (0..dim).map(move |j| (i, j))).collect();
        Self { dim, entries }
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn density(&self) -> f64 {
        if self.dim == 0 {
            return 0.0;
        }
        self.nnz() as f64 / (self.dim * self.dim) as f64
    }
}

/// A parametric NLP `min Ψ_θ(z) s.t. G_θ(z, s) = 0, H_θ(z) ≤ 0`.
///
/// Implementors return vectors and matrices sized according to [`dims`].
/// `s` is the exogenous state and `θ` the tunable parameter vector.
///
/// [`dims`]: ParametricNlp::dims
pub trait ParametricNlp<T: Real> {
    fn dims(&self) -> NlpDims;

    fn cost(&self, z: &DVector<T>, theta: &DVector<T>) -> T;

    fn cost_gradient(&self, z: &DVector<T>, theta: &DVector<T>) -> DVector<T>;

    fn equalities(&self, z: &DVector<T>, s: &DVector<T>, theta: &DVector<T>) -> DVector<T>;

    /// `∂G/∂z`, shape `n_g × n_z`.
    fn equality_jacobian(&self, z: &DVector<T>, s: &DVector<T>, theta: &DVector<T>)
        -> DMatrix<T>;

    fn inequalities(&self, z: &DVector<T>, theta: &DVector<T>) -> DVector<T>;

    /// `∂H/∂z`, shape `n_h × n_z`.
    fn inequality_jacobian(&self, z: &DVector<T>, theta: &DVector<T>) -> DMatrix<T>;

    /// `∇²_z L` with `L = Ψ + λᵀG + μᵀH`.
    fn lagrangian_hessian(
        &self,
        z: &DVector<T>,
        lambda: &DVector<T>,
        mu: &DVector<T>,
        theta: &DVector<T>,
    ) -> DMatrix<T>;

    /// `∂r/∂θ` of the stacked relaxed KKT residual, shape `n_y × n_θ`.
    /// The barrier term `τ 1` does not depend on `θ`.
    fn residual_theta_jacobian(
        &self,
        y: &PrimalDualPoint<T>,
        s: &DVector<T>,
        theta: &DVector<T>,
    ) -> DMatrix<T>;

    /// `∂r/∂s`, shape `n_y × n_s`.
    fn residual_state_jacobian(
        &self,
        y: &PrimalDualPoint<T>,
        s: &DVector<T>,
        theta: &DVector<T>,
    ) -> DMatrix<T>;

    /// Strictly interior primal point used for cold starts (`H(z) < 0`).
    fn initial_primal(&self, s: &DVector<T>, theta: &DVector<T>) -> DVector<T>;

    fn kkt_sparsity(&self) -> KktSparsity {
        KktSparsity::dense(self.dims().n_y())
    }
}
