use nalgebra::{SMatrix, SVector, Vector2, Vector3};

use super::RlError;
use crate::mpc::PolicyEval;
use crate::real::{c, Real};

/// Compatible advantage weights `w` and value weights `v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticParams<T: Real> {
    pub w: Vector2<T>,
    pub v: Vector3<T>,
}

impl<T: Real> Default for CriticParams<T> {
    fn default() -> Self {
        Self {
            w: Vector2::zeros(),
            v: Vector3::zeros(),
        }
    }
}

impl<T: Real> CriticParams<T> {
    pub fn stacked(&self) -> SVector<T, 5> {
        SVector::<T, 5>::new(self.w[0], self.w[1], self.v[0], self.v[1], self.v[2])
    }

    pub fn from_stacked(x: &SVector<T, 5>) -> Self {
        Self {
            w: Vector2::new(x[0], x[1]),
            v: Vector3::new(x[2], x[3], x[4]),
        }
    }

    /// `V_v(s) = Φ(s)ᵀ v`
    pub fn value(&self, s: T) -> T {
        features(s).dot(&self.v)
    }

    /// `Q_w(s, a) = ψᵀ w + V_v(s)`
    pub fn q_value(&self, psi: &Vector2<T>, s: T) -> T {
        psi.dot(&self.w) + self.value(s)
    }
}

/// State features `[(s - 0.5)², s, 1]`.
pub fn features<T: Real>(s: T) -> Vector3<T> {
    let d = s - c(0.5);
    Vector3::new(d * d, s, T::one())
}

/// `ψ = ∇_θ π(s) (a - π(s))` from a policy evaluation at `s`.
pub fn compatible_features<T: Real>(_s: T, a: T, eval: &PolicyEval<T>) -> Vector2<T> {
    compatible_from_gradient(eval.gradient, eval.action, a)
}

pub fn compatible_from_gradient<T: Real>(gradient: [T; 2], policy_action: T, a: T) -> Vector2<T> {
    Vector2::new(gradient[0], gradient[1]) * (a - policy_action)
}

/// One row of the LSTD-Q system.
///
/// The successor carries no compatible part: the next action is on-policy,
/// where `ψ` vanishes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticSample<T: Real> {
    pub psi: Vector2<T>,
    pub phi: Vector3<T>,
    pub phi_next: Vector3<T>,
    pub cost: T,
}

impl<T: Real> CriticSample<T> {
    pub fn new(psi: Vector2<T>, s: T, next_s: T, cost: T) -> Self {
        Self {
            psi,
            phi: features(s),
            phi_next: features(next_s),
            cost,
        }
    }

    pub fn stacked(&self) -> SVector<T, 5> {
        SVector::<T, 5>::new(self.psi[0], self.psi[1], self.phi[0], self.phi[1], self.phi[2])
    }

    pub fn stacked_next(&self) -> SVector<T, 5> {
        SVector::<T, 5>::new(
            T::zero(),
            T::zero(),
            self.phi_next[0],
            self.phi_next[1],
            self.phi_next[2],
        )
    }
}

/// `A = Σ φ (φ - γφ')ᵀ + ridge·I`, `b = Σ φ L̃`.
pub fn lstd_system<T: Real>(
    samples: &[CriticSample<T>],
    discount: T,
    ridge: T,
) -> (SMatrix<T, 5, 5>, SVector<T, 5>) {
    let mut a = SMatrix::<T, 5, 5>::identity() * ridge;
    let mut b = SVector::<T, 5>::zeros();
    for smp in samples {
        let phi = smp.stacked();
        let diff = phi - smp.stacked_next() * discount;
        a += phi * diff.transpose();
        b += phi * smp.cost;
    }
    (a, b)
}

/// Joint LSTD-Q fit of `(w, v)`.
pub fn lstd_fit<T: Real>(
    samples: &[CriticSample<T>],
    discount: T,
    ridge: T,
) -> Result<CriticParams<T>, RlError> {
    if samples.len() < 5 {
        return Err(RlError::BatchTooSmall {
            got: samples.len(),
            need: 5,
        });
    }
    let (a, b) = lstd_system(samples, discount, ridge);
    let singular = || RlError::SingularCritic {
        ridge: ridge.to_f64_lossy(),
    };
    let x = a.lu().solve(&b).ok_or_else(singular)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(singular());
    }
    Ok(CriticParams::from_stacked(&x))
}

/// `Σ φ (L̃ + γ φ'ᵀx - φᵀx) - ridge·x`; zero at the LSTD solution.
pub fn td_fixed_point_residual<T: Real>(
    samples: &[CriticSample<T>],
    params: &CriticParams<T>,
    discount: T,
    ridge: T,
) -> SVector<T, 5> {
    let x = params.stacked();
    let mut r = -x * ridge;
    for smp in samples {
        let phi = smp.stacked();
        let td = smp.cost + discount * smp.stacked_next().dot(&x) - phi.dot(&x);
        r += phi * td;
    }
    r
}

/// Root-mean-square temporal-difference error of the fitted critic.
pub fn td_rms_error<T: Real>(samples: &[CriticSample<T>], params: &CriticParams<T>, discount: T) -> T {
    if samples.is_empty() {
        return T::zero();
    }
    let x = params.stacked();
    let sq = samples.iter().fold(T::zero(), |acc, smp| {
        let td = smp.cost + discount * smp.stacked_next().dot(&x) - smp.stacked().dot(&x);
        acc + td * td
    });
    (sq / c::<T>(samples.len() as f64)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn feature_examples() {
        assert_eq!(features(0.5f64), Vector3::new(0.0, 0.5, 1.0));
        assert_eq!(features(0.0f64), Vector3::new(0.25, 0.0, 1.0));
        assert_eq!(features(1.0f64), Vector3::new(0.25, 1.0, 1.0));
    }

    #[test]
    fn compatible_feature_examples() {
        let psi = compatible_from_gradient([1.0f64, 2.0], 0.3, 0.3);
        assert_eq!(psi, Vector2::zeros());
        let psi = compatible_from_gradient([1.0f64, 2.0], 0.0, 0.1);
        assert_abs_diff_eq!(psi, Vector2::new(0.1, 0.2), epsilon = 1e-15);
        let scaled = compatible_from_gradient([1.0f64, 2.0], 0.0, 0.3);
        assert_abs_diff_eq!(scaled, psi * 3.0, epsilon = 1e-15);
    }

    #[test]
    fn q_equals_v_on_policy() {
        let p = CriticParams {
            w: Vector2::new(3.0, -1.0),
            v: Vector3::new(1.0, 2.0, 3.0),
        };
        let psi = compatible_from_gradient([0.7, -4.0], 0.2, 0.2);
        assert_eq!(p.q_value(&psi, 0.4), p.value(0.4));
    }

    #[test]
    fn zero_cost_batch_gives_zero_critic() {
        let samples: Vec<_> = (0..50)
            .map(|k| {
                let s = k as f64 / 50.0;
                CriticSample::new(Vector2::new(0.1 * s, -0.2), s, s + 0.01, 0.0)
            })
            .collect();
        let fit = lstd_fit(&samples, 0.99, 1e-8).unwrap();
        assert_eq!(fit.stacked(), SVector::<f64, 5>::zeros());
    }

    #[test]
    fn too_small_batch_rejected() {
        let samples = vec![CriticSample::new(Vector2::zeros(), 0.1, 0.2, 1.0); 4];
        assert!(matches!(
            lstd_fit(&samples, 0.9, 0.0),
            Err(RlError::BatchTooSmall { got: 4, need: 5 })
        ));
    }

    #[test]
    fn singular_system_reported() {
        // ψ ≡ 0 and ridge 0 leave the w-block empty
        let samples: Vec<_> = (0..20)
            .map(|k| CriticSample::new(Vector2::zeros(), k as f64 * 0.05, k as f64 * 0.05, 1.0))
            .collect();
        assert!(matches!(
            lstd_fit(&samples, 0.9, 0.0),
            Err(RlError::SingularCritic { .. })
        ));
        assert!(lstd_fit(&samples, 0.9, 1e-8).is_ok());
    }
}
