//! Floating-point scalar abstraction shared by the analytical code paths.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar the cost model and divergence code are generic over (`f32` or `f64`).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` constant. Never fails for finite inputs on `f32`/`f64`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize fits in a float")
    }

    /// Tolerance used when snapping nearly-integral values (e.g. before a ceiling).
    #[inline]
    fn snap_tol() -> Self {
        Self::lit(1e-9).max(Self::epsilon() * Self::lit(16.0))
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Ceiling that ignores floating-point noise just above an integer
/// (`log_10(1000)` evaluating to `3.0000000000000004` must ceil to 3).
pub fn ceil_tol<F: Scalar>(x: F) -> F {
    let r = x.round();
    if (x - r).abs() <= F::snap_tol() * F::one().max(x.abs()) {
        r
    } else {
        x.ceil()
    }
}
