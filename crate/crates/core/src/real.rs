//! Scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar the solver, environment and learner are generic over.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + LowerExp + Send + Sync
{
    /// Default ∞-norm tolerance on the relaxed KKT residual at this precision.
    const KKT_TOL: f64;
    /// Relative pivot magnitude below which an LU factorization counts as failed.
    const PIVOT_FLOOR: f64;

    /// Converts an `f64` literal; panics only if the value is not representable.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

macro_rules! impl_real {
    ($t:ty, $tol:expr, $piv:expr) => {
        impl Real for $t {
            const KKT_TOL: f64 = $tol;
            const PIVOT_FLOOR: f64 = $piv;
        }
    };
}

impl_real!(f64, 1e-8, 1e-15);
impl_real!(f32, 1e-4, 1e-7);

/// Shorthand for `T::lit`.
#[inline]
pub(crate) fn c<T: Real>(x: f64) -> T {
    T::lit(x)
}
