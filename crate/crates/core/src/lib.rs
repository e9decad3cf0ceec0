//! Self-supervised phase retrieval.
//!
//! A reconstruction network is trained from intensity-only measurements
//! `y = |Ax|^2` with a measurement-consistency loss plus a translation
//! equivariance loss, and compared against supervised training and
//! per-sample gradient descent across sampling ratios `m / n`.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision used for training (`f32`) and for
//! gradient checks (`f64`).

pub mod archive;
pub mod baseline_gd;
pub mod error;
pub mod group_actions;
pub mod idx;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod reconstructor;
pub mod scalar;
pub mod sensing;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use group_actions::{sample_shifts, ShiftTransform};
pub use losses::{LossValue, McVariant, Objective};
pub use metrics::{align_global_phase, cosine_similarity, recover_scale, SimilarityScore};
pub use reconstructor::{backproject, ModelCheckpoint, Reconstructor, ReconstructorConfig, UNetReconstructor};
pub use sensing::{
    adjoint, forward, make_dataset, make_operator, synthesize_phase_image, ComplexImage, MeasurementBatch, RealImage,
    SensingOperator,
};

pub type ComplexImage32 = ComplexImage<f32>;
pub type ComplexImage64 = ComplexImage<f64>;
pub type SensingOperator32 = SensingOperator<f32>;
pub type SensingOperator64 = SensingOperator<f64>;
pub type MeasurementBatch32 = MeasurementBatch<f32>;
pub type MeasurementBatch64 = MeasurementBatch<f64>;
pub type UNetReconstructor32 = UNetReconstructor<f32>;
pub type UNetReconstructor64 = UNetReconstructor<f64>;
pub type ModelCheckpoint32 = ModelCheckpoint<f32>;
