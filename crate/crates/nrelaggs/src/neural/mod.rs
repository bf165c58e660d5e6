//! Low-level numeric building blocks: dense layers, segment aggregation,
//! hinge loss, and Adam. Everything is generic over [`Scalar`] so the whole
//! training path can run in `f64` for verification while production uses
//! `f32`.

mod adam;
mod dense;
mod loss;
mod segment;

pub use adam::{Adam, AdamConfig};
pub use dense::{Activation, DenseLayer};
pub use loss::hinge_loss;
pub use segment::{
    segment_aggregate, segment_aggregate_backward, segment_four_way, segment_four_way_backward,
    FourWayCache, SegmentIndex, SegmentKind, COMPOSITE_ORDER,
};

/// Floating-point element type for all tensors and parameters.
pub trait Scalar:
    num_traits::Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}
