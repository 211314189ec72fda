//! Floating point scalar used by the similarity kernel and the metrics.
//!
//! Everything numeric in this crate is written against [`Scalar`], so the
//! same code runs in `f32` or `f64`. The crate root re-exports `f64`
//! instantiations as the default.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// f32 or f64
pub trait Scalar: Float + FromPrimitive + Debug + Display + Default + Send + Sync + 'static {
    /// Converts an item count. Counts in this crate stay far below 2^53, so
    /// the conversion is exact for `f64`.
    #[inline]
    fn from_count(n: u64) -> Self {
        Self::from_u64(n).expect("count representable as a float")
    }

    /// The percentage scale used by similarity and diversity.
    #[inline]
    fn hundred() -> Self {
        Self::from_u8(100).expect("100 is representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Arithmetic mean. Returns zero for an empty slice.
pub fn mean<F: Scalar>(values: &[F]) -> F {
    if values.is_empty() {
        return F::zero();
    }
    let sum = values.iter().fold(F::zero(), |acc, &v| acc + v);
    sum / F::from_count(values.len() as u64)
}
