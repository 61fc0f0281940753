use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point element type used throughout the pipeline.
///
/// Implemented for `f32` and `f64`. The file formats always store IEEE-754
/// `f64`, so `f32` values widen exactly on save and round on load.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Smallest value fed to `ln` when moving weights into the log domain.
    fn log_floor() -> Self;

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every Scalar")
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self.to_f64().expect("Scalar widens to f64")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count fits in Scalar")
    }

    /// `ln(max(self, log_floor()))`.
    #[inline]
    fn clamped_ln(self) -> Self {
        self.max(Self::log_floor()).ln()
    }
}

impl Scalar for f64 {
    #[inline]
    fn log_floor() -> Self {
        1e-300
    }
}

impl Scalar for f32 {
    #[inline]
    fn log_floor() -> Self {
        f32::MIN_POSITIVE
    }
}
