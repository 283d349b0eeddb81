//! Detector-prompted polyp segmentation: box prompts from a detector feed a
//! promptable segmenter, for still images and videos, with the standard
//! overlap and structure metrics and report tables.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapter;
pub mod backends;
pub mod data;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod prompt_bridge;
pub mod raster;
pub mod scalar;
pub mod video;

pub use error::{Error, Result};
pub use geometry::{box_iou, expand_and_clip, BBox, BinaryMask, Frame};
pub use scalar::Scalar;

pub type MetricConfigF64 = metrics::MetricConfig<f64>;
pub type MetricConfigF32 = metrics::MetricConfig<f32>;
pub type ScoreMapF64 = metrics::ScoreMap<f64>;
pub type ScoreMapF32 = metrics::ScoreMap<f32>;
pub type FrameMetricsF64 = metrics::FrameMetrics<f64>;
pub type FrameMetricsF32 = metrics::FrameMetrics<f32>;
pub type DatasetReportF64 = metrics::DatasetReport<f64>;
pub type DatasetReportF32 = metrics::DatasetReport<f32>;
