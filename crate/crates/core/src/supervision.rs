//! Training targets and losses: pseudo 3D gaze labels, Gaussian target
//! heatmaps and the weighted heatmap / direction / in-out objective.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fov::GazeVector;
use crate::geometry::{CoordinateFrame, PointCloud, Vec3};
use crate::grid::{normalized_to_cell, Grid};

/// Search radius (pixels) for a valid depth pixel when the annotated one is invalid.
pub const FALLBACK_RADIUS: usize = 5;
/// Default target Gaussian width on a 64×64 heatmap.
pub const DEFAULT_SIGMA: f64 = 3.0;
pub const DEFAULT_HEATMAP_SIZE: usize = 64;
/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;

const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SupervisionError {
    #[error("point cloud must be expressed in the eye frame")]
    CameraFrameCloud,
    #[error("gaze pixel ({0}, {1}) has no valid depth")]
    InvalidGazePixel(usize, usize),
    #[error("gaze point coincides with the eye")]
    GazeAtEye,
    #[error("heatmap peak ({0}, {1}) lies outside the {2}x{3} grid")]
    PeakOutsideGrid(f64, f64, usize, usize),
    #[error("sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error("heatmaps differ in shape: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("heatmap is empty")]
    EmptyHeatmap,
    #[error("direction vector norm {0} is not 1 (tolerance 1e-6)")]
    NotUnit(f64),
}

/// Loss coefficients. Defaults: heatmap 100, direction 0.1, in/out 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_hm: f64,
    pub lambda_dir: f64,
    pub lambda_io: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_hm: 100.0,
            lambda_dir: 0.1,
            lambda_io: 1.0,
        }
    }
}

/// Unweighted loss terms of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub heatmap: f64,
    pub direction: f64,
    pub inout: f64,
}

pub fn pseudo_gaze_gt(cloud: &PointCloud, gaze_px: (usize, usize)) -> Result<GazeVector, SupervisionError> {
    if cloud.frame() != CoordinateFrame::Eye {
        return Err(SupervisionError::CameraFrameCloud);
    }
    let p = cloud
        .point_at(gaze_px.0, gaze_px.1)
        .ok_or(SupervisionError::InvalidGazePixel(gaze_px.0, gaze_px.1))?;
    GazeVector::normalized(*p).map_err(|_| SupervisionError::GazeAtEye)
}

/// Outcome of labelling one instance with a pseudo 3D gaze.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PseudoGazeLabel {
    Direct(GazeVector),
    /// The annotated pixel had no depth; `pixel` is the nearest valid substitute.
    Fallback {
        gaze: GazeVector,
        pixel: (usize, usize),
    },
    /// No usable depth within [`FALLBACK_RADIUS`]; skip the direction loss.
    Unsupervisable,
}

impl PseudoGazeLabel {
    pub fn gaze(&self) -> Option<&GazeVector> {
        match self {
            Self::Direct(g) | Self::Fallback { gaze: g, .. } => Some(g),
            Self::Unsupervisable => None,
        }
    }
}

/// [`pseudo_gaze_gt`] with a nearest-valid-pixel fallback (Euclidean distance,
/// row-major tie-break) within `radius` pixels.
pub fn pseudo_gaze_gt_with_fallback(
    cloud: &PointCloud,
    gaze_px: (usize, usize),
    radius: usize,
) -> Result<PseudoGazeLabel, SupervisionError> {
    match pseudo_gaze_gt(cloud, gaze_px) {
        Ok(g) => return Ok(PseudoGazeLabel::Direct(g)),
        Err(SupervisionError::InvalidGazePixel(..)) | Err(SupervisionError::GazeAtEye) => {}
        Err(e) => return Err(e),
    }
    let (gx, gy) = (gaze_px.0 as i64, gaze_px.1 as i64);
    let r = radius as i64;
    let mut best: Option<(i64, (usize, usize), GazeVector)> = None;
    for y in (gy - r).max(0)..=(gy + r) {
        for x in (gx - r).max(0)..=(gx + r) {
            let d2 = (x - gx).pow(2) + (y - gy).pow(2);
            if d2 > r * r || best.as_ref().is_some_and(|b| d2 >= b.0) {
                continue;
            }
            let px = (x as usize, y as usize);
            if let Ok(g) = pseudo_gaze_gt(cloud, px) {
                best = Some((d2, px, g));
            }
        }
    }
    Ok(match best {
        Some((_, pixel, gaze)) => PseudoGazeLabel::Fallback { gaze, pixel },
        None => PseudoGazeLabel::Unsupervisable,
    })
}

/// Isotropic Gaussian target heatmap.
#[derive(Debug, Clone, PartialEq)]
pub struct GtHeatmap {
    pub values: Grid<f64>,
    pub peak: (f64, f64),
    pub sigma: f64,
}

/// Renders `exp(−‖p − peak‖² / 2σ²)` at every integer cell `p` (no truncation).
pub fn render_gt_heatmap(peak: (f64, f64), grid: (usize, usize), sigma: f64) -> Result<GtHeatmap, SupervisionError> {
    let (w, h) = grid;
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(SupervisionError::BadSigma(sigma));
    }
    let inside = |v: f64, n: usize| n > 0 && v >= 0.0 && v <= (n - 1) as f64;
    if !inside(peak.0, w) || !inside(peak.1, h) {
        return Err(SupervisionError::PeakOutsideGrid(peak.0, peak.1, w, h));
    }
    let two_s2 = 2.0 * sigma * sigma;
    let values = Grid::from_fn(w, h, |x, y| {
        let (dx, dy) = (x as f64 - peak.0, y as f64 - peak.1);
        (-(dx * dx + dy * dy) / two_s2).exp()
    });
    Ok(GtHeatmap { values, peak, sigma })
}

/// Target heatmap for a normalized gaze point, peaked at the cell that contains it.
pub fn render_gt_heatmap_normalized(
    point: (f64, f64),
    grid: (usize, usize),
    sigma: f64,
) -> Result<GtHeatmap, SupervisionError> {
    if !(0.0..=1.0).contains(&point.0) || !(0.0..=1.0).contains(&point.1) {
        return Err(SupervisionError::PeakOutsideGrid(point.0, point.1, grid.0, grid.1));
    }
    let (cx, cy) = normalized_to_cell(point, grid.0, grid.1);
    render_gt_heatmap((cx as f64, cy as f64), grid, sigma)
}

/// Mean squared per-pixel difference.
pub fn loss_heatmap(pred: &Grid<f64>, gt: &Grid<f64>) -> Result<f64, SupervisionError> {
    if pred.dims() != gt.dims() {
        return Err(SupervisionError::ShapeMismatch(
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height(),
        ));
    }
    if pred.is_empty() {
        return Err(SupervisionError::EmptyHeatmap);
    }
    let sum: f64 = pred
        .as_slice()
        .iter()
        .zip(gt.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / pred.len() as f64)
}

fn check_unit(v: &Vec3) -> Result<(), SupervisionError> {
    let n = v.norm();
    if (n - 1.0).abs() > UNIT_TOLERANCE || !n.is_finite() {
        return Err(SupervisionError::NotUnit(n));
    }
    Ok(())
}

/// `1 − ⟨pred, gt⟩`, in [0, 2].
pub fn loss_direction(pred: &Vec3, gt: &Vec3) -> Result<f64, SupervisionError> {
    check_unit(pred)?;
    check_unit(gt)?;
    Ok(1.0 - pred.dot(gt))
}

/// Gradient of [`loss_direction`] with respect to the prediction.
pub fn loss_direction_grad(_pred: &Vec3, gt: &Vec3) -> Vec3 {
    -gt
}

/// Binary cross-entropy of an in-frame probability against a {0, 1} (or soft) label.
pub fn loss_inout(pred: f64, gt: f64) -> f64 {
    let p = pred.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(gt * p.ln() + (1.0 - gt) * (1.0 - p).ln())
}

pub fn loss_total(parts: &LossParts, w: &LossWeights) -> f64 {
    w.lambda_hm * parts.heatmap + w.lambda_dir * parts.direction + w.lambda_io * parts.inout
}
