//! Annotation schema for person-frame gaze labels, validation, dataset
//! statistics, head masks and double-coding agreement.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::BufRead;

use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::grid::Grid;
use crate::metrics::{
    evaluate, phead_gt, EvalConfig, EvalInstance, EvalReport, Group, MetricsError, NormBox, PHeadRule, Prediction,
};
use crate::supervision::{render_gt_heatmap_normalized, SupervisionError, DEFAULT_HEATMAP_SIZE, DEFAULT_SIGMA};

/// The seven mutually exclusive gaze classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GazeLabel {
    InsideFrame,
    OutsideFrame,
    GazeShift,
    Occluded,
    EyesClosed,
    Uncertain,
    NotAnnotated,
}

impl GazeLabel {
    pub const ALL: [GazeLabel; 7] = [
        GazeLabel::InsideFrame,
        GazeLabel::OutsideFrame,
        GazeLabel::GazeShift,
        GazeLabel::Occluded,
        GazeLabel::EyesClosed,
        GazeLabel::Uncertain,
        GazeLabel::NotAnnotated,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            GazeLabel::InsideFrame => "inside-frame",
            GazeLabel::OutsideFrame => "outside-frame",
            GazeLabel::GazeShift => "gaze-shift",
            GazeLabel::Occluded => "occluded",
            GazeLabel::EyesClosed => "eyes-closed",
            GazeLabel::Uncertain => "uncertain",
            GazeLabel::NotAnnotated => "not-annotated",
        }
    }

    /// In/out-of-frame label for AP; `None` for the five classes without one.
    pub fn in_frame(&self) -> Option<bool> {
        match self {
            GazeLabel::InsideFrame => Some(true),
            GazeLabel::OutsideFrame => Some(false),
            _ => None,
        }
    }

    fn index(&self) -> usize {
        Self::ALL.iter().position(|l| l == self).expect("listed")
    }
}

impl fmt::Display for GazeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for GazeLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.iter().copied().find(|l| l.as_str() == s).ok_or_else(|| {
            let legal: Vec<_> = Self::ALL.iter().map(|l| l.as_str()).collect();
            format!("unknown gaze_label '{s}', expected one of: {}", legal.join(", "))
        })
    }
}

/// One annotated person in one frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotationInstance {
    pub video_id: String,
    pub clip_id: String,
    pub frame: u64,
    pub person_id: String,
    pub is_child: bool,
    pub head_bbox: NormBox,
    pub gaze_label: GazeLabel,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gaze_point: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotator_id: Option<String>,
}

/// `(video_id, frame, person_id)` identifies an annotated person-frame.
pub type PersonFrameKey = (String, u64, String);

impl AnnotationInstance {
    pub fn key(&self) -> PersonFrameKey {
        (self.video_id.clone(), self.frame, self.person_id.clone())
    }

    /// Identifier used to join predictions: `video/clip/frame/person`.
    pub fn instance_id(&self) -> String {
        format!("{}/{}/{}/{}", self.video_id, self.clip_id, self.frame, self.person_id)
    }

    pub fn group(&self) -> Group {
        if self.is_child {
            Group::Child
        } else {
            Group::Adult
        }
    }

    pub fn validate(&self) -> Result<(), SchemaViolation> {
        let b = &self.head_bbox;
        if !(b.x0 >= 0.0 && b.y0 >= 0.0 && b.x1 <= 1.0 && b.y1 <= 1.0) {
            return Err(SchemaViolation::new("head_bbox", "box must lie within [0, 1]²"));
        }
        match (self.gaze_label, self.gaze_point) {
            (GazeLabel::InsideFrame, None) => Err(SchemaViolation::new(
                "gaze_point",
                "required when gaze_label is inside-frame",
            )),
            (GazeLabel::InsideFrame, Some((x, y))) => {
                if (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y) {
                    Ok(())
                } else {
                    Err(SchemaViolation::new("gaze_point", "point must lie within [0, 1]²"))
                }
            }
            (label, Some(_)) => Err(SchemaViolation::new(
                "gaze_point",
                &format!("must be absent when gaze_label is {label}"),
            )),
            (_, None) => Ok(()),
        }
    }
}

/// A field-level schema problem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaViolation {
    pub field: String,
    pub message: String,
}

impl SchemaViolation {
    fn new(field: &str, message: &str) -> Self {
        Self {
            field: field.to_string(),
            message: message.to_string(),
        }
    }
}

impl fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "field '{}': {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed reading input: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: invalid JSON: {message}")]
    Json { line: u64, message: String },
    #[error("line {line}: {violation}")]
    Schema { line: u64, violation: SchemaViolation },
    #[error("no instances to summarize")]
    Empty,
    #[error("double-coded pair does not refer to the same person-frame: {0:?} vs {1:?}")]
    UnmatchedPair(PersonFrameKey, PersonFrameKey),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Supervision(#[from] SupervisionError),
}

impl DatasetError {
    pub fn line(&self) -> Option<u64> {
        match self {
            Self::Json { line, .. } | Self::Schema { line, .. } => Some(*line),
            _ => None,
        }
    }
}

const ANNOTATION_FIELDS: [&str; 9] = [
    "video_id",
    "clip_id",
    "frame",
    "person_id",
    "is_child",
    "head_bbox",
    "gaze_label",
    "gaze_point",
    "annotator_id",
];

fn field<'a>(obj: &'a Map<String, Value>, name: &str) -> Result<&'a Value, SchemaViolation> {
    obj.get(name)
        .ok_or_else(|| SchemaViolation::new(name, "missing required field"))
}

fn string_field(obj: &Map<String, Value>, name: &str) -> Result<String, SchemaViolation> {
    field(obj, name)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| SchemaViolation::new(name, "must be a string"))
}

fn numbers<const N: usize>(v: &Value, name: &str) -> Result<[f64; N], SchemaViolation> {
    let arr = v
        .as_array()
        .filter(|a| a.len() == N)
        .ok_or_else(|| SchemaViolation::new(name, &format!("must be an array of {N} numbers")))?;
    let mut out = [0.0; N];
    for (o, x) in out.iter_mut().zip(arr) {
        *o = x
            .as_f64()
            .ok_or_else(|| SchemaViolation::new(name, &format!("must be an array of {N} numbers")))?;
    }
    Ok(out)
}

/// Validates one decoded JSON object against the annotation schema.
pub fn instance_from_value(value: &Value) -> Result<AnnotationInstance, SchemaViolation> {
    let obj = value
        .as_object()
        .ok_or_else(|| SchemaViolation::new("<record>", "must be a JSON object"))?;
    if let Some(unknown) = obj.keys().find(|k| !ANNOTATION_FIELDS.contains(&k.as_str())) {
        return Err(SchemaViolation::new(unknown, "unknown field"));
    }
    let frame = field(obj, "frame")?
        .as_u64()
        .ok_or_else(|| SchemaViolation::new("frame", "must be a non-negative integer"))?;
    let is_child = field(obj, "is_child")?
        .as_bool()
        .ok_or_else(|| SchemaViolation::new("is_child", "must be a boolean"))?;
    let [x0, y0, x1, y1] = numbers::<4>(field(obj, "head_bbox")?, "head_bbox")?;
    let head_bbox =
        NormBox::new(x0, y0, x1, y1).map_err(|_| SchemaViolation::new("head_bbox", "need x0 < x1 and y0 < y1"))?;
    let gaze_label: GazeLabel = string_field(obj, "gaze_label")?
        .parse()
        .map_err(|m: String| SchemaViolation::new("gaze_label", &m))?;
    let gaze_point = match obj.get("gaze_point") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let [x, y] = numbers::<2>(v, "gaze_point")?;
            Some((x, y))
        }
    };
    let annotator_id = match obj.get("annotator_id") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            v.as_str()
                .ok_or_else(|| SchemaViolation::new("annotator_id", "must be a string"))?
                .to_string(),
        ),
    };
    let inst = AnnotationInstance {
        video_id: string_field(obj, "video_id")?,
        clip_id: string_field(obj, "clip_id")?,
        frame,
        person_id: string_field(obj, "person_id")?,
        is_child,
        head_bbox,
        gaze_label,
        gaze_point,
        annotator_id,
    };
    inst.validate()?;
    Ok(inst)
}

fn read_json_lines<T>(
    input: impl BufRead,
    mut decode: impl FnMut(&Value) -> Result<T, SchemaViolation>,
) -> Result<Vec<T>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line_no = i as u64 + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(trimmed).map_err(|e| DatasetError::Json {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(decode(&value).map_err(|violation| DatasetError::Schema {
            line: line_no,
            violation,
        })?);
    }
    Ok(out)
}

/// Parses a JSON Lines annotation file. Blank lines are skipped; errors carry 1-based line numbers.
pub fn parse_annotations(input: impl BufRead) -> Result<Vec<AnnotationInstance>, DatasetError> {
    read_json_lines(input, instance_from_value)
}

pub fn write_annotations(instances: &[AnnotationInstance]) -> String {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&serde_json::to_string(inst).expect("serializable"));
        out.push('\n');
    }
    out
}

/// Head boxes detected in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameHeads {
    pub video_id: String,
    pub frame: u64,
    pub boxes: Vec<NormBox>,
}

/// Detections indexed by `(video_id, frame)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HeadDetections {
    frames: BTreeMap<(String, u64), Vec<NormBox>>,
}

impl HeadDetections {
    pub fn from_frames(frames: impl IntoIterator<Item = FrameHeads>) -> Self {
        let mut out = Self::default();
        for f in frames {
            out.frames.entry((f.video_id, f.frame)).or_default().extend(f.boxes);
        }
        out
    }

    /// Boxes for a frame; a frame without a record has no heads.
    pub fn boxes(&self, video_id: &str, frame: u64) -> &[NormBox] {
        self.frames
            .get(&(video_id.to_string(), frame))
            .map_or(&[], Vec::as_slice)
    }
}

pub fn parse_head_detections(input: impl BufRead) -> Result<HeadDetections, DatasetError> {
    let frames = read_json_lines(input, |v| {
        FrameHeads::deserialize(v).map_err(|e| SchemaViolation::new("<record>", &e.to_string()))
    })?;
    Ok(HeadDetections::from_frames(frames))
}

/// Fixed-width histogram; values beyond the range land in the edge bins.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        let bins = bins.max(1);
        let step = (hi - lo) / bins as f64;
        Self {
            edges: (0..=bins).map(|i| lo + step * i as f64).collect(),
            counts: vec![0; bins],
        }
    }

    pub fn bin_of(&self, v: f64) -> usize {
        let n = self.counts.len();
        let (lo, hi) = (self.edges[0], self.edges[n]);
        let b = ((v - lo) / (hi - lo) * n as f64).floor();
        if b.is_nan() || b < 0.0 {
            0
        } else {
            (b as usize).min(n - 1)
        }
    }

    pub fn add(&mut self, v: f64) {
        let b = self.bin_of(v);
        self.counts[b] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// 2D histogram over the unit square; `counts[row][col]`, rows along y.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram2d {
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    pub counts: Vec<Vec<u64>>,
}

impl Histogram2d {
    pub fn unit_square(bins: usize) -> Self {
        let axis = Histogram::new(0.0, 1.0, bins);
        Self {
            x_edges: axis.edges.clone(),
            y_edges: axis.edges,
            counts: vec![vec![0; bins.max(1)]; bins.max(1)],
        }
    }

    pub fn add(&mut self, p: (f64, f64)) {
        let axis = Histogram {
            edges: self.x_edges.clone(),
            counts: vec![0; self.x_edges.len() - 1],
        };
        let (c, r) = (axis.bin_of(p.0), axis.bin_of(p.1));
        self.counts[r][c] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsConfig {
    pub head_area_bins: usize,
    pub head_area_max: f64,
    pub angle_bins: usize,
    pub distance_bins: usize,
    pub distance_max: f64,
    pub gaze_point_bins: usize,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            head_area_bins: 20,
            head_area_max: 0.2,
            angle_bins: 36,
            distance_bins: 20,
            distance_max: std::f64::consts::SQRT_2,
            gaze_point_bins: 10,
        }
    }
}

/// Per-instance geometry behind the histograms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InstanceGeometry {
    /// Head box area as a fraction of the image.
    pub head_area: f64,
    /// Direction from head center to gaze point in degrees, (−180, 180], 0° right, y down.
    pub gaze_angle_deg: Option<f64>,
    /// Head-center to gaze-point distance in normalized units.
    pub head_gaze_distance: Option<f64>,
}

pub fn instance_geometry(inst: &AnnotationInstance) -> InstanceGeometry {
    let (cx, cy) = inst.head_bbox.center();
    let delta = inst.gaze_point.map(|(gx, gy)| (gx - cx, gy - cy));
    InstanceGeometry {
        head_area: inst.head_bbox.area(),
        gaze_angle_deg: delta.map(|(dx, dy)| {
            let a = dy.atan2(dx).to_degrees();
            if a == -180.0 {
                180.0
            } else {
                a
            }
        }),
        head_gaze_distance: delta.map(|(dx, dy)| (dx * dx + dy * dy).sqrt()),
    }
}

/// Fraction of each gaze class, in canonical class order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    pub counts: [usize; 7],
    pub total: usize,
}

impl LabelDistribution {
    pub fn fraction(&self, label: GazeLabel) -> f64 {
        self.counts[label.index()] as f64 / self.total as f64
    }

    pub fn fractions(&self) -> Vec<(GazeLabel, f64)> {
        GazeLabel::ALL.iter().map(|&l| (l, self.fraction(l))).collect()
    }
}

impl Serialize for LabelDistribution {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(7))?;
        for (l, f) in self.fractions() {
            m.serialize_entry(l.as_str(), &f)?;
        }
        m.end()
    }
}

pub fn label_distribution(instances: &[AnnotationInstance]) -> Result<LabelDistribution, DatasetError> {
    if instances.is_empty() {
        return Err(DatasetError::Empty);
    }
    let mut counts = [0usize; 7];
    for inst in instances {
        counts[inst.gaze_label.index()] += 1;
    }
    Ok(LabelDistribution {
        counts,
        total: instances.len(),
    })
}

/// Share of in-frame gaze targets that land on a head, per group.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct HeadShare {
    pub child_pct: Option<f64>,
    pub adult_pct: Option<f64>,
    pub overall_pct: Option<f64>,
    pub child_n: usize,
    pub adult_n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LookingAtHead {
    pub all_frames: HeadShare,
    /// Frames with at least two annotated people.
    pub multi_person_frames: HeadShare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadSource {
    Detections,
    Annotations,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub instances: usize,
    pub with_gaze_point: usize,
    pub without_gaze_point: usize,
    pub child_fraction: f64,
    pub label_distribution: LabelDistribution,
    pub head_area: Histogram,
    pub gaze_angle_deg: Histogram,
    pub head_gaze_distance: Histogram,
    pub gaze_points: Histogram2d,
    pub head_source: HeadSource,
    pub looking_at_head: LookingAtHead,
}

#[derive(Default)]
struct ShareCounter {
    hits: [usize; 2],
    totals: [usize; 2],
}

impl ShareCounter {
    fn add(&mut self, group: Group, hit: bool) {
        let i = match group {
            Group::Child => 0,
            Group::Adult => 1,
        };
        self.totals[i] += 1;
        self.hits[i] += hit as usize;
    }

    fn finish(&self) -> HeadShare {
        let pct = |h: usize, t: usize| (t > 0).then(|| 100.0 * h as f64 / t as f64);
        HeadShare {
            child_pct: pct(self.hits[0], self.totals[0]),
            adult_pct: pct(self.hits[1], self.totals[1]),
            overall_pct: pct(self.hits[0] + self.hits[1], self.totals[0] + self.totals[1]),
            child_n: self.totals[0],
            adult_n: self.totals[1],
        }
    }
}

/// Summarizes an annotation set.
///
/// Head boxes for the looking-at-head shares come from `heads` when given,
/// otherwise from the annotated head boxes of every person in the same frame.
pub fn compute_stats(
    instances: &[AnnotationInstance],
    heads: Option<&HeadDetections>,
    cfg: &StatsConfig,
) -> Result<DatasetStats, DatasetError> {
    let label_distribution = label_distribution(instances)?;
    let mut head_area = Histogram::new(0.0, cfg.head_area_max, cfg.head_area_bins);
    let mut gaze_angle = Histogram::new(-180.0, 180.0, cfg.angle_bins);
    let mut distance = Histogram::new(0.0, cfg.distance_max, cfg.distance_bins);
    let mut points = Histogram2d::unit_square(cfg.gaze_point_bins);

    let mut frame_people: BTreeMap<(&str, u64), BTreeSet<&str>> = BTreeMap::new();
    let mut frame_boxes: BTreeMap<(&str, u64), Vec<NormBox>> = BTreeMap::new();
    for inst in instances {
        let key = (inst.video_id.as_str(), inst.frame);
        frame_people.entry(key).or_default().insert(&inst.person_id);
        frame_boxes.entry(key).or_default().push(inst.head_bbox);
    }

    let mut with_point = 0;
    let mut all_share = ShareCounter::default();
    let mut multi_share = ShareCounter::default();
    for inst in instances {
        let geo = instance_geometry(inst);
        head_area.add(geo.head_area);
        let Some(p) = inst.gaze_point else { continue };
        with_point += 1;
        gaze_angle.add(geo.gaze_angle_deg.expect("point present"));
        distance.add(geo.head_gaze_distance.expect("point present"));
        points.add(p);

        let key = (inst.video_id.as_str(), inst.frame);
        let boxes = match heads {
            Some(h) => h.boxes(&inst.video_id, inst.frame),
            None => frame_boxes[&key].as_slice(),
        };
        let hit = phead_gt(&[p], boxes, PHeadRule::Single);
        all_share.add(inst.group(), hit);
        if frame_people[&key].len() >= 2 {
            multi_share.add(inst.group(), hit);
        }
    }
    let children = instances.iter().filter(|i| i.is_child).count();
    Ok(DatasetStats {
        instances: instances.len(),
        with_gaze_point: with_point,
        without_gaze_point: instances.len() - with_point,
        child_fraction: children as f64 / instances.len() as f64,
        label_distribution,
        head_area,
        gaze_angle_deg: gaze_angle,
        head_gaze_distance: distance,
        gaze_points: points,
        head_source: if heads.is_some() {
            HeadSource::Detections
        } else {
            HeadSource::Annotations
        },
        looking_at_head: LookingAtHead {
            all_frames: all_share.finish(),
            multi_person_frames: multi_share.finish(),
        },
    })
}

/// Binary mask of the pixel-quantized box (edges rounded to the nearest pixel
/// boundary). A box that quantizes to nothing marks the pixel under its center.
pub fn render_head_mask(bbox: &NormBox, width: usize, height: usize) -> Grid<bool> {
    let q = |v: f64, n: usize| ((v * n as f64).round().max(0.0) as usize).min(n);
    let (c0, c1) = (q(bbox.x0, width), q(bbox.x1, width));
    let (r0, r1) = (q(bbox.y0, height), q(bbox.y1, height));
    if c1 > c0 && r1 > r0 {
        return Grid::from_fn(width, height, |x, y| (c0..c1).contains(&x) && (r0..r1).contains(&y));
    }
    let (cx, cy) = bbox.center();
    let px = ((cx * width as f64).floor().max(0.0) as usize).min(width.saturating_sub(1));
    let py = ((cy * height as f64).floor().max(0.0) as usize).min(height.saturating_sub(1));
    Grid::from_fn(width, height, |x, y| x == px && y == py)
}

/// Splits two annotation passes into person-frame pairs and keys seen in only one pass.
pub fn pair_double_coded(
    first: &[AnnotationInstance],
    second: &[AnnotationInstance],
) -> (Vec<(AnnotationInstance, AnnotationInstance)>, Vec<PersonFrameKey>) {
    let index: BTreeMap<PersonFrameKey, &AnnotationInstance> = second.iter().map(|i| (i.key(), i)).collect();
    let mut used = BTreeSet::new();
    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    for a in first {
        let k = a.key();
        match index.get(&k) {
            Some(b) => {
                used.insert(k);
                pairs.push((a.clone(), (*b).clone()));
            }
            None => unmatched.push(k),
        }
    }
    unmatched.extend(second.iter().map(|b| b.key()).filter(|k| !used.contains(k)));
    (pairs, unmatched)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgreementConfig {
    pub heatmap_size: usize,
    pub sigma: f64,
    pub eval: EvalConfig,
}

impl Default for AgreementConfig {
    fn default() -> Self {
        Self {
            heatmap_size: DEFAULT_HEATMAP_SIZE,
            sigma: DEFAULT_SIGMA,
            eval: EvalConfig::default(),
        }
    }
}

/// Scores annotator A (prediction) against annotator B (ground truth).
///
/// A's point becomes a Gaussian heatmap for AUC and a 0/1 in-frame score for
/// AP. Pairs where either side is outside the in/out taxonomy are skipped.
pub fn agreement_eval(
    pairs: &[(AnnotationInstance, AnnotationInstance)],
    cfg: &AgreementConfig,
    heads: Option<&HeadDetections>,
) -> Result<EvalReport, DatasetError> {
    let mut instances = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        if a.key() != b.key() {
            return Err(DatasetError::UnmatchedPair(a.key(), b.key()));
        }
        let (Some(a_in), Some(b_in)) = (a.gaze_label.in_frame(), b.gaze_label.in_frame()) else {
            continue;
        };
        let prediction = match a.gaze_point {
            Some(p) => Prediction {
                point: Some(p),
                heatmap: Some(render_gt_heatmap_normalized(p, (cfg.heatmap_size, cfg.heatmap_size), cfg.sigma)?.values),
                inout_score: Some(1.0),
            },
            None => Prediction {
                point: None,
                heatmap: None,
                inout_score: Some(if a_in { 1.0 } else { 0.0 }),
            },
        };
        instances.push(EvalInstance {
            id: b.instance_id(),
            group: b.group(),
            in_frame: Some(b_in),
            gt_points: b.gaze_point.into_iter().collect(),
            head_boxes: heads.map(|h| h.boxes(&b.video_id, b.frame).to_vec()),
            prediction,
        });
    }
    Ok(evaluate(&instances, &cfg.eval)?)
}
