use nalgebra::{DMatrix, DVector};

use super::kkt::{check_dims, CondensedKkt, FirstOrder};
use super::{IpmError, KktBlock, ParametricNlp, PrimalDualPoint};
use crate::real::{c, Real};

fn factor_at<T: Real, N: ParametricNlp<T> + ?Sized>(
    nlp: &N,
    y: &PrimalDualPoint<T>,
    s: &DVector<T>,
    theta: &DVector<T>,
) -> Result<CondensedKkt<T>, IpmError> {
    check_dims(&nlp.dims(), y, s, theta)?;
    let fo = FirstOrder::eval(nlp, &y.z, s, theta)?;
    if fo.h.iter().any(|&h| !(h < T::zero())) {
        return Err(IpmError::NotInterior);
    }
    let w = nlp.lagrangian_hessian(&y.z, &y.lambda, &y.mu, theta);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(IpmError::NonFinite(KktBlock::Stationarity));
    }
    CondensedKkt::factor(&w, &fo, &y.mu, c(1e-3)).map_err(|e| match e {
        IpmError::SolverFailure { pivot_ratio, .. } => IpmError::SensitivityUnavailable {
            condition: if pivot_ratio > 0.0 {
                1.0 / pivot_ratio
            } else {
                f64::INFINITY
            },
        },
        other => other,
    })
}

/// `∂y/∂θ = -(∂r/∂y)⁻¹ ∂r/∂θ` at a relaxed solution `y_τ`, shape `n_y × n_θ`.
///
/// `y_tau` should satisfy the relaxed KKT system at `τ`; the factorization
/// does not depend on `τ` beyond the point itself.
pub fn sensitivity<T: Real, N: ParametricNlp<T> + ?Sized>(
    nlp: &N,
    y_tau: &PrimalDualPoint<T>,
    s: &DVector<T>,
    theta: &DVector<T>,
    _tau: T,
) -> Result<DMatrix<T>, IpmError> {
    let kkt = factor_at(nlp, y_tau, s, theta)?;
    let r_theta = nlp.residual_theta_jacobian(y_tau, s, theta);
    let out = kkt.solve_columns(&(-r_theta));
    if out.iter().any(|v| !v.is_finite()) {
        return Err(IpmError::SensitivityUnavailable {
            condition: kkt.condition_estimate(),
        });
    }
    Ok(out)
}

/// `∂y/∂s`, shape `n_y × n_s`.
pub fn state_sensitivity<T: Real, N: ParametricNlp<T> + ?Sized>(
    nlp: &N,
    y_tau: &PrimalDualPoint<T>,
    s: &DVector<T>,
    theta: &DVector<T>,
    _tau: T,
) -> Result<DMatrix<T>, IpmError> {
    let kkt = factor_at(nlp, y_tau, s, theta)?;
    let r_s = nlp.residual_state_jacobian(y_tau, s, theta);
    let out = kkt.solve_columns(&(-r_s));
    if out.iter().any(|v| !v.is_finite()) {
        return Err(IpmError::SensitivityUnavailable {
            condition: kkt.condition_estimate(),
        });
    }
    Ok(out)
}
