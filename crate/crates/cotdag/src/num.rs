//! Scalar abstraction for score, reward, and threshold arithmetic.

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar used by prune thresholds, redundancy scores,
/// rewards, and dataset statistics.
///
/// Implemented for `f32` and `f64`. The CLI and every serialized record use
/// `f64` (see the aliases at the crate root); the generic parameter lets
/// embedders trade precision for space when post-processing large trajectory
/// sets.
pub trait Scalar:
    Float + FromPrimitive + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    /// Conversion from a count (node totals, token counts). Saturates at the
    /// scalar's maximum for counts beyond its exact range.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).unwrap_or_else(Self::max_value)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
