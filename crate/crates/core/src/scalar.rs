//! Scalar abstraction for the geometric kernels.
//!
//! Projection, PnP, and the state filter are written once against [`Real`]
//! and instantiated for `f32` and `f64`. Image processing stays in concrete
//! `f64`/`f32` buffers.

use nalgebra::RealField;
use serde::{de::DeserializeOwned, Serialize};
use std::fmt::Debug;

/// Floating point scalar usable by the geometry code: `f32` or `f64`.
pub trait Real: RealField + Copy + Default + Debug + Serialize + DeserializeOwned {}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    nalgebra::convert(x)
}

/// Converts a `T` into `f64` (lossless for both supported scalars).
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    nalgebra::try_convert::<T, f64>(x).unwrap_or(f64::NAN)
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle<T: Real>(a: T) -> T {
    let two_pi = T::two_pi();
    let pi = T::pi();
    let mut r = a % two_pi;
    if r > pi {
        r -= two_pi;
    } else if r <= -pi {
        r += two_pi;
    }
    r
}
