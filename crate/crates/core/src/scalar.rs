//! Floating-point abstraction shared by the numeric modules.
//!
//! Scoring math is written once against [`Scalar`] and instantiated for
//! `f64` (the default everywhere) and `f32`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` constant. Panics only if the value is unrepresentable,
    /// which cannot happen for the finite literals used in this crate.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    /// Smallest sequence probability kept before taking logs.
    #[inline]
    fn prob_floor() -> Self {
        Self::lit(1e-300).max(Self::min_positive_value())
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
