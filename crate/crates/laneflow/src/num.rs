//! Scalar abstraction for the numeric layers.

/// Floating-point scalar the standardizer, clusterer and forest are generic
/// over. Backed by `num_traits`; implemented for `f32` and `f64`.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + num_traits::NumAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Converts from `f64`, panicking only on values with no representation
    /// at all (never the case for finite inputs).
    fn from_f64_real(v: f64) -> Self {
        num_traits::FromPrimitive::from_f64(v).expect("finite f64 converts to Real")
    }

    /// Widens to `f64` for accumulation and reporting.
    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("Real converts to f64")
    }

    /// Converts a count; exact for every count this crate handles.
    fn from_usize_real(v: usize) -> Self {
        Self::from_f64_real(v as f64)
    }
}

impl Real for f32 {}
impl Real for f64 {}
