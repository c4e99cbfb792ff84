//! Visual localization for UAV inspection of photovoltaic plants.
//!
//! Projection, PnP, and the state filter are generic over the scalar type
//! ([`scalar::Real`], `f32` or `f64`); the aliases below name both
//! instantiations. Everything else works in `f64`.

pub mod bbox;
pub mod camera;
pub mod edge;
pub mod filter;
pub mod imaging;
pub mod pipeline;
pub mod plant;
pub mod pnp;
pub mod scalar;
pub mod structure;
pub mod synth;
pub mod tracking;

pub type PoseF32 = camera::Pose<f32>;
pub type PoseF64 = camera::Pose<f64>;
pub type IntrinsicsF32 = camera::CameraIntrinsics<f32>;
pub type IntrinsicsF64 = camera::CameraIntrinsics<f64>;
pub type CorrespondenceSetF32 = pnp::CorrespondenceSet<f32>;
pub type CorrespondenceSetF64 = pnp::CorrespondenceSet<f64>;
pub type PoseEstimateF32 = pnp::PoseEstimate<f32>;
pub type PoseEstimateF64 = pnp::PoseEstimate<f64>;
pub type FilterStateF32 = filter::FilterState<f32>;
pub type FilterStateF64 = filter::FilterState<f64>;
pub type MeasurementF32 = filter::Measurement<f32>;
pub type MeasurementF64 = filter::Measurement<f64>;
pub type GateConfigF32 = filter::GateConfig<f32>;
pub type GateConfigF64 = filter::GateConfig<f64>;
