//! Scalar abstraction: the numeric core is generic over f32/f64.

use serde::de::DeserializeOwned;
use serde::Serialize;
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar the library computes with.
///
/// Covers ordinary IEEE arithmetic plus conversion from literal f64
/// constants and (de)serialization for checkpoints and reports.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssign
    + Sum
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an f64 constant.
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant convertible to scalar")
    }

    /// Exact widening to f64 for reporting and cross-precision checks.
    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("scalar convertible to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_round_trip() {
        assert_eq!(f64::c(0.25), 0.25);
        assert_eq!(f32::c(0.25), 0.25f32);
        assert_eq!(0.5f32.to_f64_lossy(), 0.5);
    }
}
