//! Scalar abstraction: every numeric routine in this crate is generic over a
//! floating point type. `f64` is the operational default (see the aliases at
//! the crate root); `f32` is available for memory-bound experiments.

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar usable throughout the crate.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Shorthand for lifting an `f64` constant into the working scalar type.
#[inline]
pub fn real<S: Real>(x: f64) -> S {
    S::from_f64(x).expect("constant representable in scalar type")
}

/// Lift a `usize` (counts, dimensions) into the working scalar type.
#[inline]
pub fn real_of_usize<S: Real>(n: usize) -> S {
    S::from_usize(n).expect("count representable in scalar type")
}
