//! Audio-visual person verification toolkit.
//!
//! Numerical code is generic over [`scalar::Real`] (`f32` or `f64`). The
//! aliases below fix the scalar to `f64`, which is what the harness and the
//! CLI use.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backend;
pub mod calibration;
pub mod embedder;
pub mod error;
pub mod face;
pub mod frontend;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod scalar;
pub mod synth;
pub mod trials;
pub mod wpe;

pub use error::{Error, ErrorClass, Result};

pub type AudioBuffer = frontend::AudioBuffer<f64>;
pub type FeatureMatrix = frontend::FeatureMatrix<f64>;
pub type StftMatrix = frontend::StftMatrix<f64>;
pub type EmbeddingSet = backend::EmbeddingSet<f64>;
pub type LdaTransform = backend::LdaTransform<f64>;
pub type PldaModel = backend::PldaModel<f64>;
pub type BackendModel = backend::BackendModel<f64>;
pub type BoundingBox = face::BoundingBox<f64>;
pub type FaceTemplate = face::FaceTemplate<f64>;
pub type ScoreSet = trials::ScoreSet<f64>;
pub type CalibrationModel = calibration::CalibrationModel<f64>;
pub type RocCurve = metrics::RocCurve<f64>;
pub type EmbeddingTable = io::EmbeddingTable<f64>;
