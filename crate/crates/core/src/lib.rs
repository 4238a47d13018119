//! Combined NV-diamond vector / Rb scalar magnetometry.
//!
//! The core maths ([`geometry`], [`estimator`], [`linalg`]) is generic over the
//! floating-point type through [`Real`]; the measurement models and
//! simulations run in `f64`. Concrete aliases for both precisions live at the
//! crate root.

// `!(x > 0)` is used on purpose so that NaN fails validation; small dense
// matrix routines read better with explicit indices.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod estimator;
pub mod geometry;
pub mod linalg;
pub mod measurement;
pub mod rng;
pub mod scalar;
pub mod simulation;
pub mod stats;

pub use error::{Error, Result};
pub use estimator::{AngularMethod, AngularUncertainty};
pub use geometry::{Axis, AxisSet, Propagation};
pub use measurement::{
    AxisSelection, GyromagneticRatio, LiaFit, LiaParams, LiaSignal, MeasurementPair, NvReading, NvSensor, OdmrFit, OdmrParams,
    OdmrSpectrum, RbSensor,
};
pub use scalar::Real;

pub type FieldVector = geometry::FieldVector<f64>;
pub type FieldVectorF32 = geometry::FieldVector<f32>;
pub type AxisProjection = geometry::AxisProjection<f64>;
pub type AxisProjectionF32 = geometry::AxisProjection<f32>;
pub type OrientationBasis = geometry::OrientationBasis<f64>;
pub type OrientationBasisF32 = geometry::OrientationBasis<f32>;
pub type RecoveryMatrix = geometry::RecoveryMatrix<f64>;
pub type CombinedEstimate = estimator::CombinedEstimate<f64>;
pub type CombinedEstimateF32 = estimator::CombinedEstimate<f32>;
pub type CalibrationSet = estimator::CalibrationSet<f64>;
pub type BackgroundCalibration = estimator::BackgroundCalibration<f64>;
pub type Mat3 = linalg::Mat3<f64>;
