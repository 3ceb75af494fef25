//! Element types for tensors.
//!
//! Verification paths run in `f64` (finite differences need the headroom);
//! training paths may run in `f32`. Everything numeric in the crate is
//! generic over [`Scalar`] so both work from one implementation.

use std::fmt;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type tag, also used by the checkpoint format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Dtype {
    Real32,
    Real64,
}

impl Dtype {
    /// Byte width of one element.
    pub fn size(self) -> usize {
        match self {
            Dtype::Real32 => 4,
            Dtype::Real64 => 8,
        }
    }

    /// Single-byte tag used on disk.
    pub fn tag(self) -> u8 {
        match self {
            Dtype::Real32 => 0,
            Dtype::Real64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Dtype::Real32),
            1 => Some(Dtype::Real64),
            _ => None,
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dtype::Real32 => write!(f, "real32"),
            Dtype::Real64 => write!(f, "real64"),
        }
    }
}

/// Floating-point element of a [`crate::tensor::Tensor`].
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    const DTYPE: Dtype;

    #[inline]
    fn from_f64(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 converts to every Scalar")
    }

    #[inline]
    fn f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("every Scalar converts to f64")
    }

    #[inline]
    fn half() -> Self {
        Self::from_f64(0.5)
    }

    #[inline]
    fn two() -> Self {
        Self::from_f64(2.0)
    }
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::Real32;
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::Real64;
}
