use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar the estimators and closed-form analysis are written against.
///
/// Implemented for `f32` and `f64`. The simulator and Monte Carlo harness are
/// `f64`-only; everything that is pure algebra over a dataset stays generic.
pub trait Real:
    'static
    + Float
    + FromPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
{
    /// Lossless-enough conversion from an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    /// Converts a count to the scalar type.
    fn count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    /// Widening used for error payloads and reports.
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Arithmetic mean of a slice; `NaN` when empty.
pub(crate) fn mean<T: Real>(xs: &[T]) -> T {
    xs.iter().copied().sum::<T>() / T::count(xs.len())
}

/// `|a - b| <= tol * scale`, where `scale` is the largest magnitude among `a`, `b` and `extra`.
///
/// Used for identities whose terms may cancel: the tolerance is relative to the
/// size of the quantities that entered the computation, not to a possibly tiny result.
pub fn approx_eq_scaled<T: Real>(a: T, b: T, extra: &[T], tol: T) -> bool {
    let scale = extra
        .iter()
        .fold(a.abs().max(b.abs()), |acc, x| acc.max(x.abs()));
    (a - b).abs() <= tol * scale.max(T::min_positive_value())
}
