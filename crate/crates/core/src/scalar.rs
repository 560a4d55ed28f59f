//! Scalar abstraction shared by the multilinear-algebra and regression code.

use std::fmt::Debug;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real field element usable by the tensor and tensor-regression routines.
///
/// Implemented for `f32` and `f64`. Everything downstream of the regression
/// (residual GP, detector, simulator) works in `f64`.
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive + Debug + Send + Sync {
    /// Lossy conversion from an `f64` literal.
    fn lit(x: f64) -> Self {
        nalgebra::convert(x)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where T: RealField + Copy + FromPrimitive + ToPrimitive + Debug + Send + Sync {}
