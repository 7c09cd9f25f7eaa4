//! Scalar abstractions shared by the numeric kernels.
//!
//! Everything that only needs field arithmetic (RCA, the assist matrix,
//! density) is written against [`Value`], so it runs on `f32`, `f64` and on
//! exact rationals such as [`num_rational::Ratio<i64>`]. The BiCM solver needs
//! `exp`/`sqrt`-style operations and is written against [`Real`].

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

/// A number supporting exact field operations and ordering.
pub trait Value:
    Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
    /// Lossy conversion from a count.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Value for T where
    T: Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
}

/// A floating point [`Value`].
pub trait Real: Value + Float {}

impl<T> Real for T where T: Value + Float {}

/// Exact rational scalar used where bit-exact identities are checked.
pub type Exact = num_rational::Ratio<i64>;
