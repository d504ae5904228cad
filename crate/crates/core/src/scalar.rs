//! Floating-point element type shared by the numeric modules.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign, NumCast, ToPrimitive};

/// Element type for matrices, parameters and gradients.
///
/// Everything in the crate is exercised with `f64`; gradient checks at the
/// advertised tolerances are only meaningful at that precision.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64` constants. Goes through `NumCast`, which
    /// some extended-precision types implement where `FromPrimitive::from_f64`
    /// falls back to an integer conversion.
    fn from_f64_lossy(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("f64 constant representable")
    }

    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    fn from_usize_lossy(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).expect("count representable")
    }

    // The model's transcendentals go through these so a wider type can supply
    // implementations as precise as its arithmetic.

    fn div_acc(self, rhs: Self) -> Self {
        self / rhs
    }

    fn exp_acc(self) -> Self {
        self.exp()
    }

    fn ln_acc(self) -> Self {
        self.ln()
    }

    fn tanh_acc(self) -> Self {
        self.tanh()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one().div_acc(T::one() + (-x).exp_acc())
}
