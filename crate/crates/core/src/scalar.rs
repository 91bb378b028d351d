//! Scalar abstraction for the numeric core.
//!
//! All linear algebra in this crate is written against a single trait so the
//! same code runs at `f64` (the default everywhere) or `f32`. Constants that
//! appear in formulas are written as `f64` literals and converted through
//! [`FromPrimitive`], which keeps the generic code readable.

use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by every routine in this crate.
///
/// `RealField` supplies the field operations plus `sqrt`/`exp`/`powi` and
/// ordering; the `num-traits` conversions bridge literal constants and
/// serialized values.
pub trait Scalar:
    nalgebra::RealField + FromPrimitive + ToPrimitive + Copy + Default + std::iter::Sum
{
}

impl<T> Scalar for T where
    T: nalgebra::RealField + FromPrimitive + ToPrimitive + Copy + Default + std::iter::Sum
{
}

/// Converts an `f64` constant into the working scalar type.
///
/// Panics only if the target type cannot represent any `f64` at all, which
/// cannot happen for the supported float types.
#[inline]
pub fn cvt<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 constant must convert into the scalar type")
}

/// Machine epsilon of the scalar type, found by bisection.
pub fn machine_eps<T: Scalar>() -> T {
    let two = cvt::<T>(2.0);
    let mut eps = T::one();
    while T::one() + eps / two > T::one() {
        eps /= two;
    }
    eps
}

/// Validation tolerance that honors a target `f64` bound but widens for
/// lower-precision scalars.
pub fn scaled_tol<T: Scalar>(target: f64, eps_multiples: f64) -> T {
    let floor = machine_eps::<T>() * cvt::<T>(eps_multiples);
    let target = cvt::<T>(target);
    if floor > target {
        floor
    } else {
        target
    }
}
