//! Crop-ensemble stability of depth-derived gaze vectors.
//!
//! Each image is cropped several times, depth is obtained per crop from a
//! [`DepthProvider`], and the eye-to-target direction is recomputed. A
//! geometrically consistent depth source yields the same direction for
//! every crop, so the spread of the vectors measures inconsistency.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formats::{self, FormatError};
use crate::geometry::{
    crop_intrinsics, unproject_pixel, CameraIntrinsics, CropMode, CropRect, DepthMap, GeometryError, Vec3,
};
use crate::grid::Grid;

pub const DEFAULT_CROPS: usize = 5;
pub const DEFAULT_MIN_AREA_FRACTION: f64 = 0.25;
/// Attempts per crop before the constraints are declared unsatisfiable.
pub const MAX_CROP_ATTEMPTS: usize = 1000;

#[derive(Debug, Error)]
pub enum StabilityError {
    #[error("no crop of {width}x{height} with area fraction >= {min_area_fraction} contains all anchors after {attempts} attempts")]
    Unsatisfiable {
        width: usize,
        height: usize,
        min_area_fraction: f64,
        attempts: usize,
    },
    #[error("anchor pixel ({0}, {1}) lies outside the crop")]
    AnchorOutsideCrop(usize, usize),
    #[error("invalid depth at anchor pixel ({0}, {1})")]
    InvalidAnchorDepth(usize, usize),
    #[error("eye and gaze target coincide in 3D")]
    ZeroLength,
    #[error("provider returned {found_w}x{found_h} depth for a {expected_w}x{expected_h} crop")]
    WrongDepthSize {
        expected_w: usize,
        expected_h: usize,
        found_w: usize,
        found_h: usize,
    },
    #[error("no depth available for crop {0}")]
    MissingCrop(String),
    #[error("no images given")]
    NoImages,
    #[error("every crop failed for every image")]
    NoUsableImages,
    #[error("invalid synthetic scene: {0}")]
    BadScene(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Depth and focal length estimated for one crop.
#[derive(Debug, Clone, PartialEq)]
pub struct ProvidedDepth {
    pub depth: DepthMap,
    pub focal_px: f64,
}

/// Source of per-crop depth, standing in for a monocular depth network.
pub trait DepthProvider: Send + Sync {
    /// Depth for `crop`, sized `crop.width × crop.height`.
    fn depth_for_crop(&self, crop: &CropRect) -> Result<ProvidedDepth, StabilityError>;

    /// Crops the provider is restricted to, if it cannot serve arbitrary ones.
    fn fixed_crops(&self) -> Option<Vec<CropRect>> {
        None
    }
}

/// `"x,y,w,h"` key naming a crop in manifests.
pub fn crop_key(crop: &CropRect) -> String {
    format!("{},{},{},{}", crop.x, crop.y, crop.width, crop.height)
}

pub fn parse_crop_key(key: &str) -> Option<CropRect> {
    let v: Vec<usize> = key.split(',').map(|s| s.trim().parse().ok()).collect::<Option<_>>()?;
    match v[..] {
        [x, y, width, height] => Some(CropRect { x, y, width, height }),
        _ => None,
    }
}

/// Precomputed rasters, one per crop, each with an intrinsics sidecar.
#[derive(Debug, Clone)]
pub struct FileDepthProvider {
    rasters: BTreeMap<CropRect, PathBuf>,
}

impl FileDepthProvider {
    pub fn new(rasters: BTreeMap<CropRect, PathBuf>) -> Self {
        Self { rasters }
    }
}

impl DepthProvider for FileDepthProvider {
    fn depth_for_crop(&self, crop: &CropRect) -> Result<ProvidedDepth, StabilityError> {
        let path = self
            .rasters
            .get(crop)
            .ok_or_else(|| StabilityError::MissingCrop(crop_key(crop)))?;
        let (depth, k) = formats::load_depth(path, None)?;
        Ok(ProvidedDepth {
            depth,
            focal_px: k.focal_px,
        })
    }

    fn fixed_crops(&self) -> Option<Vec<CropRect>> {
        Some(self.rasters.keys().copied().collect())
    }
}

/// Analytic plane scene seen by the full-image camera, with an optional
/// shift-and-scale error in inverse depth.
///
/// The estimate for a crop is `1/ẑ = scale · (1/z + shift · (1 − a))`, where
/// `a` is the crop's share of the image area: an affine-invariant estimator
/// resolves the shift differently depending on how much context it sees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticScene {
    pub focal_px: f64,
    /// Plane normal `n` in camera coordinates; points satisfy `n·X = offset`.
    pub normal: [f64; 3],
    pub offset: f64,
    #[serde(default)]
    pub shift: f64,
    #[serde(default = "unit_scale")]
    pub scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

impl Default for SyntheticScene {
    fn default() -> Self {
        Self {
            focal_px: 500.0,
            normal: [0.0, -0.3, 1.0],
            offset: 3.0,
            shift: 0.0,
            scale: 1.0,
        }
    }
}

/// [`SyntheticScene`] bound to an image size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticDepthProvider {
    pub scene: SyntheticScene,
    pub width: usize,
    pub height: usize,
}

impl SyntheticDepthProvider {
    pub fn new(scene: SyntheticScene, width: usize, height: usize) -> Result<Self, StabilityError> {
        if !(scene.scale > 0.0 && scene.scale.is_finite()) || !scene.shift.is_finite() {
            return Err(StabilityError::BadScene(
                "scale must be positive and shift finite".into(),
            ));
        }
        if !(scene.offset > 0.0) {
            return Err(StabilityError::BadScene("plane offset must be positive".into()));
        }
        CameraIntrinsics::new(scene.focal_px, width, height)?;
        Ok(Self { scene, width, height })
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::new(self.scene.focal_px, self.width, self.height).expect("validated")
    }

    /// True depth at a full-image pixel; `None` where the ray misses the plane.
    pub fn true_depth(&self, x: usize, y: usize) -> Option<f64> {
        let k = self.intrinsics();
        let ray = Vec3::new(
            (x as f64 - k.principal_x) / k.focal_px,
            (y as f64 - k.principal_y) / k.focal_px,
            1.0,
        );
        let denom = Vec3::from(self.scene.normal).dot(&ray);
        let z = self.scene.offset / denom;
        (denom > 0.0 && z.is_finite()).then_some(z)
    }
}

impl DepthProvider for SyntheticDepthProvider {
    fn depth_for_crop(&self, crop: &CropRect) -> Result<ProvidedDepth, StabilityError> {
        crop.check_inside(self.width, self.height)?;
        let area = crop.area() as f64 / (self.width * self.height) as f64;
        let shift = self.scene.shift * (1.0 - area);
        let grid = Grid::from_fn(crop.width, crop.height, |x, y| {
            match self.true_depth(crop.x + x, crop.y + y) {
                Some(z) => 1.0 / (self.scene.scale * (1.0 / z + shift)),
                None => f64::NAN,
            }
        });
        Ok(ProvidedDepth {
            depth: DepthMap::from_grid(grid),
            focal_px: self.scene.focal_px,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropConstraints {
    pub min_area_fraction: f64,
    /// Pixels every crop must contain.
    pub anchors: Vec<(usize, usize)>,
}

impl Default for CropConstraints {
    fn default() -> Self {
        Self {
            min_area_fraction: DEFAULT_MIN_AREA_FRACTION,
            anchors: Vec::new(),
        }
    }
}

/// Draws `n` axis-aligned crops that satisfy `constraints`.
pub fn sample_crops_with(
    width: usize,
    height: usize,
    n: usize,
    constraints: &CropConstraints,
    rng: &mut impl Rng,
) -> Result<Vec<CropRect>, StabilityError> {
    let unsatisfiable = || StabilityError::Unsatisfiable {
        width,
        height,
        min_area_fraction: constraints.min_area_fraction,
        attempts: MAX_CROP_ATTEMPTS,
    };
    if width == 0 || height == 0 || constraints.anchors.iter().any(|&(x, y)| x >= width || y >= height) {
        return Err(unsatisfiable());
    }
    let min_area = (constraints.min_area_fraction * (width * height) as f64)
        .ceil()
        .max(1.0) as usize;
    // an empty span places no restriction on the crop position
    let (ax0, ax1) = anchor_span(constraints.anchors.iter().map(|a| a.0)).unwrap_or((width - 1, 0));
    let (ay0, ay1) = anchor_span(constraints.anchors.iter().map(|a| a.1)).unwrap_or((height - 1, 0));
    let min_w = min_area.div_ceil(height).max((ax1 + 1).saturating_sub(ax0));
    if min_w > width {
        return Err(unsatisfiable());
    }

    let mut crops = Vec::with_capacity(n);
    for _ in 0..n {
        let mut found = None;
        for _ in 0..MAX_CROP_ATTEMPTS {
            let w = rng.random_range(min_w..=width);
            let min_h = min_area.div_ceil(w).max((ay1 + 1).saturating_sub(ay0));
            if min_h > height {
                continue;
            }
            let h = rng.random_range(min_h..=height);
            let x = rng.random_range((ax1 + 1).saturating_sub(w)..=ax0.min(width - w));
            let y = rng.random_range((ay1 + 1).saturating_sub(h)..=ay0.min(height - h));
            found = Some(CropRect {
                x,
                y,
                width: w,
                height: h,
            });
            break;
        }
        crops.push(found.ok_or_else(unsatisfiable)?);
    }
    Ok(crops)
}

/// Inclusive span of anchor coordinates; `None` when there are no anchors.
fn anchor_span(values: impl Iterator<Item = usize> + Clone) -> Option<(usize, usize)> {
    Some((values.clone().min()?, values.max()?))
}

/// Seeded [`sample_crops_with`].
pub fn sample_crops(
    width: usize,
    height: usize,
    n: usize,
    constraints: &CropConstraints,
    seed: u64,
) -> Result<Vec<CropRect>, StabilityError> {
    sample_crops_with(width, height, n, constraints, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Unit eye-to-target vector in the crop's camera frame.
///
/// Anchors are full-image pixels; the depth at each anchor pixel is used as is.
pub fn gaze_vector_for_crop(
    image: (usize, usize),
    crop: &CropRect,
    provider: &dyn DepthProvider,
    eye_px: (usize, usize),
    gaze_px: (usize, usize),
    mode: CropMode,
) -> Result<Vec3, StabilityError> {
    crop.check_inside(image.0, image.1)?;
    for (x, y) in [eye_px, gaze_px] {
        if !crop.contains(x, y) {
            return Err(StabilityError::AnchorOutsideCrop(x, y));
        }
    }
    let provided = provider.depth_for_crop(crop)?;
    let d = &provided.depth;
    if (d.width(), d.height()) != (crop.width, crop.height) {
        return Err(StabilityError::WrongDepthSize {
            expected_w: crop.width,
            expected_h: crop.height,
            found_w: d.width(),
            found_h: d.height(),
        });
    }
    let full = CameraIntrinsics::new(provided.focal_px, image.0, image.1)?;
    let k = crop_intrinsics(&full, crop, mode)?;
    let point = |(x, y): (usize, usize)| {
        let (lx, ly) = (x - crop.x, y - crop.y);
        d.depth(lx, ly)
            .map(|z| unproject_pixel(lx as f64, ly as f64, z, &k))
            .ok_or(StabilityError::InvalidAnchorDepth(x, y))
    };
    let diff = point(gaze_px)? - point(eye_px)?;
    let norm = diff.norm();
    if !(norm > 0.0) {
        return Err(StabilityError::ZeroLength);
    }
    Ok(diff / norm)
}

/// One image of the audit.
pub struct StabilityImage {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    pub eye_px: (usize, usize),
    pub gaze_px: (usize, usize),
    pub provider: Box<dyn DepthProvider>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageStability {
    pub image_id: String,
    pub crops: usize,
    pub failed_crops: usize,
    /// Population standard deviation of each vector component over the crops.
    pub std: [f64; 3],
    pub mean: [f64; 3],
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcludedImage {
    pub image_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityResult {
    pub mode: CropMode,
    pub crops_per_image: usize,
    pub seed: u64,
    pub images: Vec<ImageStability>,
    pub excluded: Vec<ExcludedImage>,
    /// Component-wise median of the per-image standard deviations.
    pub median_std: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityConfig {
    pub mode: CropMode,
    pub crops_per_image: usize,
    pub min_area_fraction: f64,
    pub seed: u64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            mode: CropMode::Consistent,
            crops_per_image: DEFAULT_CROPS,
            min_area_fraction: DEFAULT_MIN_AREA_FRACTION,
            seed: 0,
        }
    }
}

/// Population standard deviation and mean per component.
pub fn component_std(vectors: &[Vec3]) -> ([f64; 3], [f64; 3]) {
    let n = vectors.len() as f64;
    let mut mean = [0.0; 3];
    let mut std = [0.0; 3];
    for c in 0..3 {
        let m = vectors.iter().map(|v| v[c]).sum::<f64>() / n;
        mean[c] = m;
        std[c] = (vectors.iter().map(|v| (v[c] - m).powi(2)).sum::<f64>() / n).sqrt();
    }
    (std, mean)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn audit_image(img: &StabilityImage, index: usize, cfg: &StabilityConfig) -> Result<ImageStability, String> {
    let crops = match img.provider.fixed_crops() {
        Some(c) => c,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(index as u64);
            let constraints = CropConstraints {
                min_area_fraction: cfg.min_area_fraction,
                anchors: vec![img.eye_px, img.gaze_px],
            };
            sample_crops_with(img.width, img.height, cfg.crops_per_image, &constraints, &mut rng)
                .map_err(|e| e.to_string())?
        }
    };
    let mut vectors = Vec::new();
    let mut errors = Vec::new();
    for crop in &crops {
        match gaze_vector_for_crop(
            (img.width, img.height),
            crop,
            img.provider.as_ref(),
            img.eye_px,
            img.gaze_px,
            cfg.mode,
        ) {
            Ok(v) => vectors.push(v),
            Err(e) => errors.push(format!("crop {}: {e}", crop_key(crop))),
        }
    }
    if vectors.is_empty() {
        return Err(errors.join("; "));
    }
    let (std, mean) = component_std(&vectors);
    Ok(ImageStability {
        image_id: img.image_id.clone(),
        crops: vectors.len(),
        failed_crops: errors.len(),
        std,
        mean,
        errors,
    })
}

/// Runs the audit. Images are processed in parallel; results keep input order.
/// Image `i` draws its crops from stream `i` of the seeded generator.
pub fn stability(images: &[StabilityImage], cfg: &StabilityConfig) -> Result<StabilityResult, StabilityError> {
    if images.is_empty() {
        return Err(StabilityError::NoImages);
    }
    let outcomes: Vec<_> = images
        .par_iter()
        .enumerate()
        .map(|(i, img)| audit_image(img, i, cfg))
        .collect();
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for (img, outcome) in images.iter().zip(outcomes) {
        match outcome {
            Ok(s) => kept.push(s),
            Err(reason) => excluded.push(ExcludedImage {
                image_id: img.image_id.clone(),
                reason,
            }),
        }
    }
    if kept.is_empty() {
        return Err(StabilityError::NoUsableImages);
    }
    let mut median_std = [0.0; 3];
    for (c, m) in median_std.iter_mut().enumerate() {
        let mut col: Vec<f64> = kept.iter().map(|s| s.std[c]).collect();
        *m = median(&mut col);
    }
    Ok(StabilityResult {
        mode: cfg.mode,
        crops_per_image: cfg.crops_per_image,
        seed: cfg.seed,
        images: kept,
        excluded,
        median_std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const W: usize = 160;
    const H: usize = 120;
    const EYE: (usize, usize) = (40, 30);
    const TARGET: (usize, usize) = (120, 90);

    fn plane(shift: f64) -> SyntheticDepthProvider {
        SyntheticDepthProvider::new(
            SyntheticScene {
                shift,
                ..SyntheticScene::default()
            },
            W,
            H,
        )
        .unwrap()
    }

    fn crops() -> Vec<CropRect> {
        let c = CropConstraints {
            min_area_fraction: 0.25,
            anchors: vec![EYE, TARGET],
        };
        sample_crops(W, H, 5, &c, 7).unwrap()
    }

    #[test]
    fn single_full_crop_when_fraction_is_one() {
        let c = CropConstraints {
            min_area_fraction: 1.0,
            anchors: vec![],
        };
        assert_eq!(sample_crops(W, H, 1, &c, 3).unwrap(), vec![CropRect::full(W, H)]);
    }

    #[test]
    fn crops_are_seeded_and_satisfy_constraints() {
        let a = crops();
        assert_eq!(a, crops());
        for c in &a {
            assert!(c.contains(EYE.0, EYE.1) && c.contains(TARGET.0, TARGET.1));
            assert!(c.area() * 4 >= W * H);
            c.check_inside(W, H).unwrap();
        }
    }

    #[test]
    fn impossible_constraints_error() {
        let c = CropConstraints {
            min_area_fraction: 0.25,
            anchors: vec![(W, 0)],
        };
        assert!(matches!(
            sample_crops(W, H, 1, &c, 0),
            Err(StabilityError::Unsatisfiable { .. })
        ));
    }

    #[test]
    fn consistent_mode_is_crop_invariant() {
        let p = plane(0.0);
        let full = gaze_vector_for_crop((W, H), &CropRect::full(W, H), &p, EYE, TARGET, CropMode::Consistent).unwrap();
        for c in crops() {
            let v = gaze_vector_for_crop((W, H), &c, &p, EYE, TARGET, CropMode::Consistent).unwrap();
            assert!((v - full).norm() < 1e-9, "{c:?}");
        }
    }

    #[test]
    fn shifted_depth_changes_vector_between_crops() {
        let p = plane(0.1);
        let full = gaze_vector_for_crop((W, H), &CropRect::full(W, H), &p, EYE, TARGET, CropMode::Consistent).unwrap();
        let small = CropRect {
            x: 30,
            y: 20,
            width: 100,
            height: 80,
        };
        let v = gaze_vector_for_crop((W, H), &small, &p, EYE, TARGET, CropMode::Consistent).unwrap();
        assert!((v - full).norm() > 0.0);
    }

    #[test]
    fn coincident_anchors_error() {
        let p = plane(0.0);
        let r = gaze_vector_for_crop((W, H), &CropRect::full(W, H), &p, EYE, EYE, CropMode::Consistent);
        assert!(matches!(r, Err(StabilityError::ZeroLength)));
    }

    #[test]
    fn std_examples() {
        let (s, m) = component_std(&[Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0)]);
        assert_eq!(s, [1.0, 0.0, 0.0]);
        assert_eq!(m, [0.0, 0.0, 0.0]);
        assert_eq!(component_std(&[Vec3::new(0.3, 0.4, 0.5)]).0, [0.0; 3]);
        assert_eq!(median(&mut [3.0, 1.0, 2.0, 10.0]), 2.5);
    }

    fn image(id: &str, shift: f64) -> StabilityImage {
        StabilityImage {
            image_id: id.into(),
            width: W,
            height: H,
            eye_px: EYE,
            gaze_px: TARGET,
            provider: Box::new(plane(shift)),
        }
    }

    #[test]
    fn audit_null_case_and_ordering() {
        let cfg = StabilityConfig::default();
        let r = stability(&[image("a", 0.0), image("b", 0.0)], &cfg).unwrap();
        assert!(r.median_std.iter().all(|&s| s < 1e-9));
        let run = |shift| stability(&[image("a", shift)], &cfg).unwrap().median_std;
        let (a, b, c) = (run(0.02), run(0.05), run(0.1));
        for i in 0..3 {
            assert!(a[i] < b[i] && b[i] < c[i], "{a:?} {b:?} {c:?}");
        }
    }

    #[test]
    fn unusable_images_are_excluded() {
        let mut bad = image("bad", 0.0);
        bad.gaze_px = bad.eye_px;
        let r = stability(&[image("ok", 0.0), bad], &StabilityConfig::default()).unwrap();
        assert_eq!(r.images.len(), 1);
        assert_eq!(r.excluded[0].image_id, "bad");
    }

    #[test]
    fn crop_keys_round_trip() {
        let c = CropRect {
            x: 1,
            y: 2,
            width: 30,
            height: 40,
        };
        assert_eq!(parse_crop_key(&crop_key(&c)), Some(c));
        assert_eq!(parse_crop_key("1,2,3"), None);
    }
}
