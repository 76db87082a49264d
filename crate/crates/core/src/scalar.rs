//! Scalar abstraction shared by the metric and Pareto code.
//!
//! Rates, κ and per-instance scores are all ratios of small counts, so the
//! same code runs over `f64`, `f32` and exact `Ratio<i64>`. The exact
//! instantiation is what the brute-force oracles compare against.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{Num, ToPrimitive};

/// Numeric type usable for rates, agreement statistics and score vectors.
pub trait Scalar: Num + ToPrimitive + PartialOrd + Copy + Debug + Send + Sync + 'static {
    /// Exact conversion from a count.
    fn from_count(n: u64) -> Self;

    /// `num / den`; `den` must be non-zero.
    fn ratio(num: u64, den: u64) -> Self {
        Self::from_count(num) / Self::from_count(den)
    }

    /// Lossy conversion used when rendering or bootstrapping.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    fn from_count(n: u64) -> Self {
        n as f64
    }
}

impl Scalar for f32 {
    fn from_count(n: u64) -> Self {
        n as f32
    }
}

impl Scalar for Ratio<i64> {
    fn from_count(n: u64) -> Self {
        Ratio::from_integer(i64::try_from(n).expect("count exceeds i64"))
    }

    fn to_f64_lossy(self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
}

/// Arithmetic mean; `None` for an empty slice.
pub fn mean<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let sum = values.iter().fold(T::zero(), |acc, v| acc + *v);
    Some(sum / T::from_count(values.len() as u64))
}
