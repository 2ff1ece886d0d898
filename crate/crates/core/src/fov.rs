//! 3D field-of-view heatmaps and the planar gaze-cone baseline.

use thiserror::Error;

use crate::geometry::{CameraIntrinsics, CoordinateFrame, EyeFrame, PointCloud, Vec3};
use crate::grid::Grid;

/// Cosine above which the field equals the cosine itself.
pub const FOV_THRESHOLD: f64 = 0.9;
/// Rate of the exponential decay below the threshold.
pub const FOV_DECAY_RATE: f64 = 5.0;
/// Points closer than this to the eye have no direction.
pub const MIN_POINT_NORM: f64 = 1e-9;

const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FovError {
    #[error("gaze direction must be non-zero and finite")]
    ZeroGaze,
    #[error("gaze vector norm {0} is not 1")]
    NotUnit(f64),
    #[error("point cloud must be expressed in the eye frame")]
    CameraFrameCloud,
    #[error("head pixel ({0}, {1}) lies outside the {2}x{3} image")]
    HeadOutsideImage(f64, f64, usize, usize),
    #[error("gaze direction projects to a point in the image plane")]
    DegenerateProjection,
}

/// Unit gaze direction in the eye frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeVector(Vec3);

impl GazeVector {
    /// Accepts a vector that is already unit length (within 1e-9).
    pub fn new(v: Vec3) -> Result<Self, FovError> {
        let n = v.norm();
        if (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(FovError::NotUnit(n));
        }
        Ok(Self(v))
    }

    pub fn normalized(v: Vec3) -> Result<Self, FovError> {
        let n = v.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(FovError::ZeroGaze);
        }
        Ok(Self(v / n))
    }

    pub fn as_vec(&self) -> &Vec3 {
        &self.0
    }
}

/// Per-pixel scalar field with a validity mask; invalid cells hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub values: Grid<f64>,
    pub valid: Grid<bool>,
}

impl ScalarField {
    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        match self.valid.get(x, y) {
            Some(true) => self.values.get(x, y).copied(),
            _ => None,
        }
    }
}

/// Cosine similarity between the gaze and each point direction.
pub type CosineField = ScalarField;

/// The field-of-view heatmap, values in [0, 1].
pub type FovField = ScalarField;

fn check_eye_frame(cloud: &PointCloud) -> Result<(), FovError> {
    if cloud.frame() != CoordinateFrame::Eye {
        return Err(FovError::CameraFrameCloud);
    }
    Ok(())
}

/// Unit direction of an eye-frame point, `None` at the eye itself.
fn point_direction(p: &Vec3) -> Option<Vec3> {
    let n = p.norm();
    (n >= MIN_POINT_NORM).then(|| p / n)
}

pub fn cosine_field(cloud: &PointCloud, gaze: &GazeVector) -> Result<CosineField, FovError> {
    check_eye_frame(cloud)?;
    let (w, h) = (cloud.width(), cloud.height());
    let mut values = Grid::filled(w, h, 0.0);
    let mut valid = Grid::filled(w, h, false);
    for (x, y, p) in cloud.iter_pixels() {
        if let Some(u) = point_direction(p) {
            *values.get_mut(x, y).expect("in cloud bounds") = gaze.0.dot(&u).clamp(-1.0, 1.0);
            *valid.get_mut(x, y).expect("in cloud bounds") = true;
        }
    }
    Ok(ScalarField { values, valid })
}

/// Field value for one cosine: identity above the threshold, exponential decay below.
pub fn fov_value(c: f64) -> f64 {
    if c > FOV_THRESHOLD {
        c
    } else {
        FOV_THRESHOLD * (FOV_DECAY_RATE * c).exp() / (FOV_DECAY_RATE * FOV_THRESHOLD).exp()
    }
}

/// Derivative of [`fov_value`] with respect to the cosine. At the threshold the
/// decay branch is used.
pub fn fov_value_derivative(c: f64) -> f64 {
    if c > FOV_THRESHOLD {
        1.0
    } else {
        FOV_DECAY_RATE * fov_value(c)
    }
}

pub fn fov_heatmap(cosines: &CosineField) -> FovField {
    let values = Grid::from_vec(
        cosines.width(),
        cosines.height(),
        cosines
            .values
            .as_slice()
            .iter()
            .zip(cosines.valid.as_slice())
            .map(|(&c, &ok)| if ok { fov_value(c) } else { 0.0 })
            .collect(),
    )
    .expect("same dims");
    ScalarField {
        values,
        valid: cosines.valid.clone(),
    }
}

/// Gradient of every field value with respect to the raw gaze components.
///
/// `gaze` is treated as a free 3-vector (the cosine is `gaze · u`), so callers
/// that normalize must chain through their normalization. Invalid pixels hold `None`.
pub fn fov_jacobian(cloud: &PointCloud, gaze: &Vec3) -> Result<Grid<Option<Vec3>>, FovError> {
    check_eye_frame(cloud)?;
    let mut out = Grid::filled(cloud.width(), cloud.height(), None);
    for (x, y, p) in cloud.iter_pixels() {
        if let Some(u) = point_direction(p) {
            let c = gaze.dot(&u);
            *out.get_mut(x, y).expect("in cloud bounds") = Some(u * fov_value_derivative(c));
        }
    }
    Ok(out)
}

/// Field values evaluated for a raw (not necessarily unit) gaze; used with
/// [`fov_jacobian`] for gradient checks.
pub fn fov_values_raw(cloud: &PointCloud, gaze: &Vec3) -> Result<Grid<Option<f64>>, FovError> {
    check_eye_frame(cloud)?;
    let mut out = Grid::filled(cloud.width(), cloud.height(), None);
    for (x, y, p) in cloud.iter_pixels() {
        if let Some(u) = point_direction(p) {
            *out.get_mut(x, y).expect("in cloud bounds") = Some(fov_value(gaze.dot(&u)));
        }
    }
    Ok(out)
}

/// Planar cone: `max(0, cos ∠(p − head, gaze2d))` with no decay. Zero at the head pixel.
pub fn cone2d_heatmap(
    head_px: (f64, f64),
    gaze2d: (f64, f64),
    width: usize,
    height: usize,
) -> Result<FovField, FovError> {
    let (hx, hy) = head_px;
    if !(hx >= 0.0 && hy >= 0.0 && hx <= (width as f64 - 1.0) && hy <= (height as f64 - 1.0)) {
        return Err(FovError::HeadOutsideImage(hx, hy, width, height));
    }
    let gn = (gaze2d.0 * gaze2d.0 + gaze2d.1 * gaze2d.1).sqrt();
    if (gn - 1.0).abs() > 1e-6 {
        return Err(FovError::NotUnit(gn));
    }
    let values = Grid::from_fn(width, height, |x, y| {
        let (dx, dy) = (x as f64 - hx, y as f64 - hy);
        let n = (dx * dx + dy * dy).sqrt();
        if n < MIN_POINT_NORM {
            0.0
        } else {
            ((dx * gaze2d.0 + dy * gaze2d.1) / n).max(0.0)
        }
    });
    Ok(ScalarField {
        values,
        valid: Grid::filled(width, height, true),
    })
}

/// Image-plane direction of an eye-frame gaze: the derivative of the projection
/// of `eye + t·g` at `t = 0`, normalized.
pub fn projected_gaze_2d(frame: &EyeFrame, gaze: &GazeVector, k: &CameraIntrinsics) -> Result<(f64, f64), FovError> {
    let g = frame.direction_to_camera(gaze.as_vec());
    let e = frame.origin;
    if !(e.z > 0.0) {
        return Err(FovError::DegenerateProjection);
    }
    let du = k.focal_px * (g.x * e.z - e.x * g.z) / (e.z * e.z);
    let dv = k.focal_px * (g.y * e.z - e.y * g.z) / (e.z * e.z);
    let n = (du * du + dv * dv).sqrt();
    if !(n > 1e-12) {
        return Err(FovError::DegenerateProjection);
    }
    Ok((du / n, dv / n))
}
