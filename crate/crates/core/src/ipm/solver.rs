use nalgebra::DVector;

use super::kkt::{check_dims, CondensedKkt, FirstOrder};
use super::{IpmError, KktBlock, ParametricNlp, PrimalDualPoint};
use crate::real::{c, Real};

/// Options for a fixed-`τ` solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions<T: Real> {
    /// Barrier parameter; the solve targets the relaxed KKT system at exactly this value.
    pub tau: T,
    /// ∞-norm tolerance on the relaxed KKT residual.
    pub tol: T,
    pub max_iter: usize,
    /// Fraction-to-boundary factor κ: `μ` and `-H` keep at least `(1-κ)` of their value.
    pub fraction_to_boundary: T,
    /// Upper end of the `δI` regularization ladder on the `(z, z)` block.
    pub max_regularization: T,
    /// Maximum number of step halvings in the residual line search.
    pub max_backtracks: usize,
}

impl<T: Real> SolveOptions<T> {
    pub fn new(tau: T) -> Self {
        Self {
            tau,
            tol: c(T::KKT_TOL),
            max_iter: 200,
            fraction_to_boundary: c(0.995),
            max_regularization: c(1e-3),
            max_backtracks: 30,
        }
    }

    pub fn with_tol(mut self, tol: T) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn validate(&self) -> Result<(), IpmError> {
        if !(self.tau > T::zero()) || !self.tau.is_finite() {
            return Err(IpmError::InvalidOptions("tau must be positive and finite"));
        }
        if !(self.tol > T::zero()) {
            return Err(IpmError::InvalidOptions("tol must be positive"));
        }
        if !(self.fraction_to_boundary > T::zero() && self.fraction_to_boundary < T::one()) {
            return Err(IpmError::InvalidOptions(
                "fraction_to_boundary must lie in (0, 1)",
            ));
        }
        if self.max_regularization < T::zero() {
            return Err(IpmError::InvalidOptions(
                "max_regularization must be nonnegative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport<T: Real> {
    pub converged: bool,
    /// Final ∞-norm of the relaxed KKT residual.
    pub residual_norm: T,
    pub iterations: usize,
    pub warm_start_used: bool,
    /// Largest `δ` the regularization ladder needed over the solve.
    pub regularization: T,
}

/// Solves the relaxed KKT system at `opts.tau`.
///
/// Running out of iterations is not an error: the returned report has
/// `converged == false` and the caller decides what to do with the point.
pub fn solve<T: Real, N: ParametricNlp<T> + ?Sized>(
    nlp: &N,
    s: &DVector<T>,
    theta: &DVector<T>,
    opts: &SolveOptions<T>,
    warm: Option<&PrimalDualPoint<T>>,
) -> Result<(PrimalDualPoint<T>, SolveReport<T>), IpmError> {
    solve_observed(nlp, s, theta, opts, warm, |_| {})
}

fn strictly_interior<T: Real>(h: &DVector<T>, mu: &DVector<T>) -> bool {
    h.iter().all(|&v| v < T::zero()) && mu.iter().all(|&v| v > T::zero())
}

/// [`solve`], calling `observer` on the starting point and every accepted iterate.
pub fn solve_observed<T, N, F>(
    nlp: &N,
    s: &DVector<T>,
    theta: &DVector<T>,
    opts: &SolveOptions<T>,
    warm: Option<&PrimalDualPoint<T>>,
    mut observer: F,
) -> Result<(PrimalDualPoint<T>, SolveReport<T>), IpmError>
where
    T: Real,
    N: ParametricNlp<T> + ?Sized,
    F: FnMut(&PrimalDualPoint<T>),
{
    opts.validate()?;
    let dims = nlp.dims();
    let tau = opts.tau;

    let mut y = match warm {
        Some(w) => {
            check_dims(&dims, w, s, theta)?;
            let h = nlp.inequalities(&w.z, theta);
            if !strictly_interior(&h, &w.mu) {
                return Err(IpmError::NotInterior);
            }
            w.clone()
        }
        None => {
            let z = nlp.initial_primal(s, theta);
            let h = nlp.inequalities(&z, theta);
            if h.len() != dims.n_h || h.iter().any(|&v| !(v < T::zero())) {
                return Err(IpmError::NotInterior);
            }
            let mu = h.map(|v| tau / (-v));
            PrimalDualPoint::new(z, DVector::zeros(dims.n_g), mu)
        }
    };
    check_dims(&dims, &y, s, theta)?;
    observer(&y);

    let kappa = opts.fraction_to_boundary;
    let armijo = c::<T>(1e-4);
    let half = c::<T>(0.5);

    let mut fo = FirstOrder::eval(nlp, &y.z, s, theta)?;
    let mut r = fo.residual(&y, tau);
    let mut norm = r.amax();
    let mut iterations = 0;
    let mut max_reg = T::zero();

    while !(norm <= opts.tol) && iterations < opts.max_iter {
        if !norm.is_finite() {
            return Err(IpmError::NonFinite(KktBlock::Stationarity));
        }
        let w = nlp.lagrangian_hessian(&y.z, &y.lambda, &y.mu, theta);
        if w.iter().any(|v| !v.is_finite()) {
            return Err(IpmError::NonFinite(KktBlock::Stationarity));
        }
        let kkt = CondensedKkt::factor(&w, &fo, &y.mu, opts.max_regularization)?;
        if kkt.regularization > max_reg {
            max_reg = kkt.regularization;
        }
        let step = kkt.solve(&(-&r));
        if step.iter().any(|v| !v.is_finite()) {
            return Err(IpmError::SolverFailure {
                regularization: kkt.regularization.to_f64_lossy(),
                pivot_ratio: 0.0,
            });
        }
        let d = PrimalDualPoint::from_vector(&step, &dims);

        // fraction-to-boundary on μ and on the linearized H
        let mut alpha = T::one();
        for (m, dm) in y.mu.iter().zip(d.mu.iter()) {
            if *dm < T::zero() {
                alpha = alpha.min(-kappa * *m / *dm);
            }
        }
        let hz_dz = &fo.hz * &d.z;
        for (h, dh) in fo.h.iter().zip(hz_dz.iter()) {
            if *dh > T::zero() {
                alpha = alpha.min(kappa * (-*h) / *dh);
            }
        }

        let r_norm2 = r.norm();
        let mut accepted = None;
        let mut fallback = None;
        for _ in 0..=opts.max_backtracks {
            let trial = PrimalDualPoint {
                z: &y.z + &d.z * alpha,
                lambda: &y.lambda + &d.lambda * alpha,
                mu: &y.mu + &d.mu * alpha,
            };
            if let Ok(fo_t) = FirstOrder::eval(nlp, &trial.z, s, theta) {
                if strictly_interior(&fo_t.h, &trial.mu) {
                    let r_t = fo_t.residual(&trial, tau);
                    let n2 = r_t.norm();
                    if n2.is_finite() {
                        if n2 <= (T::one() - armijo * alpha) * r_norm2 {
                            accepted = Some((trial, fo_t, r_t));
                            break;
                        }
                        fallback = Some((trial, fo_t, r_t));
                    }
                }
            }
            alpha *= half;
        }
        // A stalled line search still takes its shortest interior trial.
        let Some((y_new, fo_new, r_new)) = accepted.or(fallback) else {
            break;
        };
        y = y_new;
        fo = fo_new;
        r = r_new;
        norm = r.amax();
        iterations += 1;
        observer(&y);
    }

    let report = SolveReport {
        converged: norm <= opts.tol,
        residual_norm: norm,
        iterations,
        warm_start_used: warm.is_some(),
        regularization: max_reg,
    };
    Ok((y, report))
}
