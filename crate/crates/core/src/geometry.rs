//! Pinhole camera model, depth unprojection and the eye coordinate frame.
//!
//! Camera axes follow image conventions: x to the right, y down, z forward.
//! Pixel `(x, y)` is the column/row index; no half-pixel offset is applied.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;

pub type Vec3 = Vector3<f64>;

/// Threshold below which `d × E_z` is treated as degenerate.
pub const DEGENERATE_CROSS_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("depth map is {found_w}x{found_h} but intrinsics describe {expected_w}x{expected_h}")]
    DimensionMismatch {
        expected_w: usize,
        expected_h: usize,
        found_w: usize,
        found_h: usize,
    },
    #[error("focal length must be positive, got {0}")]
    NonPositiveFocal(f64),
    #[error("image dimensions must be at least 1x1, got {0}x{1}")]
    EmptyImage(usize, usize),
    #[error("depth buffer holds {found} values, expected {expected}")]
    BufferLength { expected: usize, found: usize },
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("eye position has zero norm")]
    ZeroNormEye,
    #[error("point cloud is already expressed in the eye frame")]
    AlreadyEyeFrame,
    #[error("crop {x},{y} {width}x{height} does not fit inside a {image_w}x{image_h} image")]
    CropOutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
        image_w: usize,
        image_h: usize,
    },
    #[error("no valid depth at pixel ({0}, {1})")]
    InvalidDepth(usize, usize),
    #[error("pixel ({0}, {1}) is outside the raster or listed twice")]
    BadPixel(usize, usize),
}

/// Square-pixel, zero-skew pinhole intrinsics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub focal_px: f64,
    pub width: usize,
    pub height: usize,
    pub principal_x: f64,
    pub principal_y: f64,
}

impl CameraIntrinsics {
    /// Intrinsics with the principal point at the image center.
    pub fn new(focal_px: f64, width: usize, height: usize) -> Result<Self, GeometryError> {
        let k = Self {
            focal_px,
            width,
            height,
            principal_x: width as f64 / 2.0,
            principal_y: height as f64 / 2.0,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn with_principal(mut self, x: f64, y: f64) -> Self {
        self.principal_x = x;
        self.principal_y = y;
        self
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.focal_px > 0.0) || !self.focal_px.is_finite() {
            return Err(GeometryError::NonPositiveFocal(self.focal_px));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::EmptyImage(self.width, self.height));
        }
        Ok(())
    }

    /// The 3×3 calibration matrix.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.focal_px,
            0.0,
            self.principal_x,
            0.0,
            self.focal_px,
            self.principal_y,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// Per-pixel metric depth along the camera z axis.
///
/// Non-finite and non-positive samples are invalid and stored as NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    values: Grid<f64>,
    valid: Grid<bool>,
}

impl DepthMap {
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self, GeometryError> {
        let found = values.len();
        let grid = Grid::from_vec(width, height, values).ok_or(GeometryError::BufferLength {
            expected: width * height,
            found,
        })?;
        Ok(Self::from_grid(grid))
    }

    pub fn from_grid(values: Grid<f64>) -> Self {
        let valid = values.map(|&z| z.is_finite() && z > 0.0);
        let values = Grid::from_vec(
            values.width(),
            values.height(),
            values
                .as_slice()
                .iter()
                .zip(valid.as_slice())
                .map(|(&z, &ok)| if ok { z } else { f64::NAN })
                .collect(),
        )
        .expect("same dimensions");
        Self { values, valid }
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    /// Depth at `(x, y)` when the pixel exists and is valid.
    pub fn depth(&self, x: usize, y: usize) -> Option<f64> {
        match self.valid.get(x, y) {
            Some(true) => self.values.get(x, y).copied(),
            _ => None,
        }
    }

    pub fn values(&self) -> &Grid<f64> {
        &self.values
    }

    pub fn validity(&self) -> &Grid<bool> {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.as_slice().iter().filter(|&&v| v).count()
    }

    /// Sub-raster covering `crop`.
    pub fn crop(&self, crop: &CropRect) -> Result<Self, GeometryError> {
        crop.check_inside(self.width(), self.height())?;
        let values = Grid::from_fn(crop.width, crop.height, |x, y| {
            *self.values.get(crop.x + x, crop.y + y).expect("inside")
        });
        Ok(Self::from_grid(values))
    }

    /// Median of the valid depths in the 3×3 neighborhood of `(x, y)`.
    pub fn median_depth_3x3(&self, x: usize, y: usize) -> Option<f64> {
        let mut samples = Vec::with_capacity(9);
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 {
                    continue;
                }
                if let Some(z) = self.depth(nx as usize, ny as usize) {
                    samples.push(z);
                }
            }
        }
        if samples.is_empty() {
            return None;
        }
        samples.sort_by(f64::total_cmp);
        let n = samples.len();
        Some(if n % 2 == 1 {
            samples[n / 2]
        } else {
            0.5 * (samples[n / 2 - 1] + samples[n / 2])
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordinateFrame {
    Camera,
    Eye,
}

/// One 3D point per valid depth pixel, in row-major pixel order.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    width: usize,
    height: usize,
    frame: CoordinateFrame,
    points: Vec<Vec3>,
    pixels: Vec<usize>,
    pixel_to_point: Vec<Option<usize>>,
}

impl PointCloud {
    /// Assembles a cloud from explicit `(pixel, point)` pairs on a `width`×`height` raster.
    pub fn from_pixel_points(
        width: usize,
        height: usize,
        frame: CoordinateFrame,
        entries: impl IntoIterator<Item = ((usize, usize), Vec3)>,
    ) -> Result<Self, GeometryError> {
        let mut entries: Vec<_> = entries.into_iter().collect();
        for &((x, y), _) in &entries {
            if x >= width || y >= height {
                return Err(GeometryError::BadPixel(x, y));
            }
        }
        entries.sort_by_key(|&((x, y), _)| y * width + x);
        let mut pixel_to_point = vec![None; width * height];
        let mut points = Vec::with_capacity(entries.len());
        let mut pixels = Vec::with_capacity(entries.len());
        for ((x, y), p) in entries {
            let idx = y * width + x;
            if pixel_to_point[idx].is_some() {
                return Err(GeometryError::BadPixel(x, y));
            }
            pixel_to_point[idx] = Some(points.len());
            pixels.push(idx);
            points.push(p);
        }
        Ok(Self {
            width,
            height,
            frame,
            points,
            pixels,
            pixel_to_point,
        })
    }

    pub fn frame(&self) -> CoordinateFrame {
        self.frame
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the point produced by pixel `(x, y)`.
    pub fn point_index(&self, x: usize, y: usize) -> Option<usize> {
        if x >= self.width || y >= self.height {
            return None;
        }
        self.pixel_to_point[y * self.width + x]
    }

    pub fn point_at(&self, x: usize, y: usize) -> Option<&Vec3> {
        self.point_index(x, y).map(|i| &self.points[i])
    }

    /// Pixel that produced point `i`.
    pub fn pixel_of(&self, i: usize) -> (usize, usize) {
        let p = self.pixels[i];
        (p % self.width, p / self.width)
    }

    /// Iterates `(x, y, point)`.
    pub fn iter_pixels(&self) -> impl Iterator<Item = (usize, usize, &Vec3)> {
        self.pixels
            .iter()
            .zip(&self.points)
            .map(|(&p, v)| (p % self.width, p / self.width, v))
    }

    fn with_points(&self, frame: CoordinateFrame, points: Vec<Vec3>) -> Self {
        Self {
            width: self.width,
            height: self.height,
            frame,
            points,
            pixels: self.pixels.clone(),
            pixel_to_point: self.pixel_to_point.clone(),
        }
    }
}

/// Back-projects a single pixel at depth `z`.
pub fn unproject_pixel(x: f64, y: f64, z: f64, k: &CameraIntrinsics) -> Vec3 {
    Vec3::new(
        (x - k.principal_x) * z / k.focal_px,
        (y - k.principal_y) * z / k.focal_px,
        z,
    )
}

/// Lifts every valid depth pixel into a camera-frame point cloud.
pub fn unproject(depth: &DepthMap, k: &CameraIntrinsics) -> Result<PointCloud, GeometryError> {
    k.validate()?;
    if depth.width() != k.width || depth.height() != k.height {
        return Err(GeometryError::DimensionMismatch {
            expected_w: k.width,
            expected_h: k.height,
            found_w: depth.width(),
            found_h: depth.height(),
        });
    }
    let n = k.width * k.height;
    let mut points = Vec::with_capacity(depth.valid_count());
    let mut pixels = Vec::with_capacity(depth.valid_count());
    let mut pixel_to_point = vec![None; n];
    for (x, y, &z) in depth.values().iter_xy() {
        if !*depth.validity().get(x, y).expect("same dims") {
            continue;
        }
        pixel_to_point[y * k.width + x] = Some(points.len());
        pixels.push(y * k.width + x);
        points.push(unproject_pixel(x as f64, y as f64, z, k));
    }
    Ok(PointCloud {
        width: k.width,
        height: k.height,
        frame: CoordinateFrame::Camera,
        points,
        pixels,
        pixel_to_point,
    })
}

/// Projects a camera-frame point to continuous pixel coordinates.
pub fn project(point: &Vec3, k: &CameraIntrinsics) -> Result<(f64, f64), GeometryError> {
    if !(point.z > 0.0) {
        return Err(GeometryError::BehindCamera(point.z));
    }
    Ok((
        k.focal_px * point.x / point.z + k.principal_x,
        k.focal_px * point.y / point.z + k.principal_y,
    ))
}

/// Orthonormal frame anchored at the eye with `ez` along the camera→eye ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EyeFrame {
    pub origin: Vec3,
    pub ex: Vec3,
    pub ey: Vec3,
    pub ez: Vec3,
}

impl EyeFrame {
    /// Rotation taking camera-frame offsets into eye coordinates (rows are the basis).
    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_rows(&[self.ex.transpose(), self.ey.transpose(), self.ez.transpose()])
    }

    pub fn to_eye(&self, p: &Vec3) -> Vec3 {
        let d = p - self.origin;
        Vec3::new(self.ex.dot(&d), self.ey.dot(&d), self.ez.dot(&d))
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.origin + self.ex * p.x + self.ey * p.y + self.ez * p.z
    }

    /// Rotates a direction from eye into camera coordinates (no translation).
    pub fn direction_to_camera(&self, d: &Vec3) -> Vec3 {
        self.ex * d.x + self.ey * d.y + self.ez * d.z
    }
}

/// Builds the eye frame for an eye at `eye` (camera coordinates).
///
/// `ex = normalize(down × ez)` with `down = (0, 1, 0)`; when the eye lies on the
/// vertical axis `ex` falls back to the camera x axis, re-orthogonalized against `ez`.
pub fn build_eye_frame(eye: &Vec3) -> Result<EyeFrame, GeometryError> {
    let norm = eye.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(GeometryError::ZeroNormEye);
    }
    let ez = eye / norm;
    let down = Vec3::new(0.0, 1.0, 0.0);
    let cross = down.cross(&ez);
    let ex = if cross.norm() < DEGENERATE_CROSS_EPS {
        let x = Vec3::x();
        (x - ez * ez.dot(&x)).normalize()
    } else {
        cross.normalize()
    };
    let ey = ez.cross(&ex);
    Ok(EyeFrame {
        origin: *eye,
        ex,
        ey,
        ez,
    })
}

/// Re-expresses a camera-frame cloud in the eye frame.
pub fn to_eye_frame(cloud: &PointCloud, frame: &EyeFrame) -> Result<PointCloud, GeometryError> {
    if cloud.frame == CoordinateFrame::Eye {
        return Err(GeometryError::AlreadyEyeFrame);
    }
    let points = cloud.points.iter().map(|p| frame.to_eye(p)).collect();
    Ok(cloud.with_points(CoordinateFrame::Eye, points))
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CropRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl CropRect {
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            x: 0,
            y: 0,
            width,
            height,
        }
    }

    pub fn contains(&self, px: usize, py: usize) -> bool {
        px >= self.x && py >= self.y && px < self.x + self.width && py < self.y + self.height
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn check_inside(&self, image_w: usize, image_h: usize) -> Result<(), GeometryError> {
        if self.width == 0 || self.height == 0 || self.x + self.width > image_w || self.y + self.height > image_h {
            return Err(GeometryError::CropOutOfBounds {
                x: self.x,
                y: self.y,
                width: self.width,
                height: self.height,
                image_w,
                image_h,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CropMode {
    /// Keep the parent camera: same focal length, principal point shifted by the crop origin.
    Consistent,
    /// Treat the crop as a fresh image with the principal point at its center.
    Recentered,
}

impl std::str::FromStr for CropMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "consistent" => Ok(Self::Consistent),
            "recentered" => Ok(Self::Recentered),
            other => Err(format!(
                "unknown crop mode '{other}' (expected consistent or recentered)"
            )),
        }
    }
}

/// Intrinsics of the image cropped to `crop`.
///
/// In recentered mode the focal length is kept; callers substitute a per-crop
/// estimate when their provider supplies one.
pub fn crop_intrinsics(
    k: &CameraIntrinsics,
    crop: &CropRect,
    mode: CropMode,
) -> Result<CameraIntrinsics, GeometryError> {
    k.validate()?;
    crop.check_inside(k.width, k.height)?;
    let (px, py) = match mode {
        CropMode::Consistent => (k.principal_x - crop.x as f64, k.principal_y - crop.y as f64),
        CropMode::Recentered => (crop.width as f64 / 2.0, crop.height as f64 / 2.0),
    };
    Ok(CameraIntrinsics {
        focal_px: k.focal_px,
        width: crop.width,
        height: crop.height,
        principal_x: px,
        principal_y: py,
    })
}

/// 3D eye position for a 2D anchor (typically the head-box center), using the
/// 3×3 median depth around the pixel.
pub fn locate_eye(depth: &DepthMap, k: &CameraIntrinsics, x: usize, y: usize) -> Result<Vec3, GeometryError> {
    let z = depth.median_depth_3x3(x, y).ok_or(GeometryError::InvalidDepth(x, y))?;
    Ok(unproject_pixel(x as f64, y as f64, z, k))
}
