//! Geometry-grounded gaze analysis: depth unprojection into eye-centred
//! frames, 3D field-of-view heatmaps, training targets and losses, gaze
//! metrics, annotation handling and crop-stability audits.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod formats;
pub mod fov;
pub mod geometry;
pub mod grid;
pub mod metrics;
pub mod stability;
pub mod supervision;

pub use geometry::{CameraIntrinsics, CropMode, CropRect, DepthMap, EyeFrame, PointCloud, Vec3};
pub use grid::Grid;
