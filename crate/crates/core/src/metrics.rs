//! Gaze-following evaluation: heatmap AUC, L2 distance, in/out average
//! precision and looking-at-heads precision, with child/adult breakdowns.
//!
//! All coordinates are normalized to the unit square with y pointing down.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{cell_to_normalized, normalized_to_cell, Grid};
use crate::supervision::DEFAULT_SIGMA;

/// Default AUC positive radius (cells): three target-Gaussian widths.
pub const DEFAULT_AUC_RADIUS: f64 = 3.0 * DEFAULT_SIGMA;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("prediction and ground truth grids differ in shape: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("binarized ground truth needs at least one positive and one negative pixel")]
    DegenerateGroundTruth,
    #[error("prediction heatmap contains NaN")]
    NanScore,
    #[error("no ground-truth gaze points")]
    NoGroundTruth,
    #[error("scores and labels differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("average precision needs at least one positive label")]
    NoPositives,
    #[error("no prediction falls inside a head box")]
    NoPredictedPositives,
    #[error("invalid box [{0}, {1}, {2}, {3}]: need min < max on both axes")]
    InvalidBox(f64, f64, f64, f64),
    #[error("no instances left to evaluate")]
    NoInstances,
}

/// Axis-aligned box in normalized coordinates. Membership is closed on all edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct NormBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl NormBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, MetricsError> {
        if !(x0 < x1 && y0 < y1) || ![x0, y0, x1, y1].iter().all(|v| v.is_finite()) {
            return Err(MetricsError::InvalidBox(x0, y0, x1, y1));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn contains(&self, p: (f64, f64)) -> bool {
        p.0 >= self.x0 && p.0 <= self.x1 && p.1 >= self.y0 && p.1 <= self.y1
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }
}

impl TryFrom<[f64; 4]> for NormBox {
    type Error = MetricsError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<NormBox> for [f64; 4] {
    fn from(b: NormBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

/// ROC AUC over pixels via the rank-sum statistic; ties share their average rank.
pub fn auc(pred: &Grid<f64>, gt: &Grid<bool>) -> Result<f64, MetricsError> {
    if pred.dims() != gt.dims() {
        return Err(MetricsError::ShapeMismatch(
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height(),
        ));
    }
    if pred.as_slice().iter().any(|v| v.is_nan()) {
        return Err(MetricsError::NanScore);
    }
    let n_pos = gt.as_slice().iter().filter(|&&b| b).count();
    let n_neg = gt.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::DegenerateGroundTruth);
    }
    let mut order: Vec<usize> = (0..pred.len()).collect();
    let scores = pred.as_slice();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let labels = gt.as_slice();
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie block i..=j shares the mean rank
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_block = order[i..=j].iter().filter(|&&k| labels[k]).count();
        pos_rank_sum += mean_rank * pos_in_block as f64;
        i = j + 1;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Cells within `radius` (cell units) of any annotated point's cell.
pub fn binarize_gt(points: &[(f64, f64)], grid: (usize, usize), radius: f64) -> Grid<bool> {
    let (w, h) = grid;
    let cells: Vec<(usize, usize)> = points.iter().map(|&p| normalized_to_cell(p, w, h)).collect();
    let r2 = radius * radius;
    Grid::from_fn(w, h, |x, y| {
        cells.iter().any(|&(cx, cy)| {
            let (dx, dy) = (x as f64 - cx as f64, y as f64 - cy as f64);
            dx * dx + dy * dy <= r2
        })
    })
}

/// Normalized location of the heatmap maximum (cell center, first in row-major order).
pub fn heatmap_point(heatmap: &Grid<f64>) -> Option<(f64, f64)> {
    heatmap
        .argmax()
        .map(|c| cell_to_normalized(c, heatmap.width(), heatmap.height()))
}

fn l2(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// `(min, mean)` Euclidean distance from the prediction to the annotations.
pub fn distances(pred: (f64, f64), gt_points: &[(f64, f64)]) -> Result<(f64, f64), MetricsError> {
    if gt_points.is_empty() {
        return Err(MetricsError::NoGroundTruth);
    }
    let d: Vec<f64> = gt_points.iter().map(|&g| l2(pred, g)).collect();
    let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let avg = d.iter().sum::<f64>() / d.len() as f64;
    Ok((min, avg))
}

/// Average precision as `Σ (R_k − R_{k−1}) · P_k` over the descending-score
/// ranking. Equal scores keep their input order.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MetricsError::NanScore);
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(MetricsError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut tp = 0usize;
    let mut ap = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
            ap += tp as f64 / (rank + 1) as f64;
        }
    }
    Ok(ap / n_pos as f64)
}

/// How many annotations must land on a head for the instance to count as looking at one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PHeadRule {
    /// Any annotation inside any box.
    #[default]
    Single,
    /// At least two annotations inside the same box.
    Multi,
}

impl std::str::FromStr for PHeadRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(Self::Single),
            "multi" => Ok(Self::Multi),
            other => Err(format!("unknown P.Head rule '{other}' (expected single or multi)")),
        }
    }
}

/// Whether the ground truth counts as looking at a head.
pub fn phead_gt(points: &[(f64, f64)], boxes: &[NormBox], rule: PHeadRule) -> bool {
    match rule {
        PHeadRule::Single => points.iter().any(|&p| boxes.iter().any(|b| b.contains(p))),
        PHeadRule::Multi => boxes
            .iter()
            .any(|b| points.iter().filter(|&&p| b.contains(p)).count() >= 2),
    }
}

pub fn on_any_head(point: (f64, f64), boxes: &[NormBox]) -> bool {
    boxes.iter().any(|b| b.contains(point))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PHeadInstance {
    pub pred_point: (f64, f64),
    pub head_boxes: Vec<NormBox>,
    pub gt_is_head: bool,
}

/// Precision of "prediction lands on a head" against the ground-truth label.
pub fn phead_precision(instances: &[PHeadInstance]) -> Result<f64, MetricsError> {
    let (tp, fp) = instances
        .iter()
        .filter(|i| on_any_head(i.pred_point, &i.head_boxes))
        .fold(
            (0usize, 0usize),
            |(tp, fp), i| {
                if i.gt_is_head {
                    (tp + 1, fp)
                } else {
                    (tp, fp + 1)
                }
            },
        );
    if tp + fp == 0 {
        return Err(MetricsError::NoPredictedPositives);
    }
    Ok(tp as f64 / (tp + fp) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `None` when the predictor declines to localize (e.g. it judged the target out of frame).
    pub point: Option<(f64, f64)>,
    pub heatmap: Option<Grid<f64>>,
    pub inout_score: Option<f64>,
}

impl Prediction {
    pub fn from_point(point: (f64, f64)) -> Self {
        Self {
            point: Some(point),
            heatmap: None,
            inout_score: None,
        }
    }

    /// Prediction whose point is the heatmap argmax. `None` for an empty or all-NaN heatmap.
    pub fn from_heatmap(heatmap: Grid<f64>, inout_score: Option<f64>) -> Option<Self> {
        let point = heatmap_point(&heatmap)?;
        Some(Self {
            point: Some(point),
            heatmap: Some(heatmap),
            inout_score,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Child,
    Adult,
}

/// One prediction paired with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalInstance {
    pub id: String,
    pub group: Group,
    /// `Some(true)` in frame, `Some(false)` out of frame, `None` for other labels.
    pub in_frame: Option<bool>,
    pub gt_points: Vec<(f64, f64)>,
    /// Heads in the frame; `None` when no detections were supplied.
    pub head_boxes: Option<Vec<NormBox>>,
    pub prediction: Prediction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub auc_radius: f64,
    pub phead_rule: PHeadRule,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            auc_radius: DEFAULT_AUC_RADIUS,
            phead_rule: PHeadRule::Single,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CellCounts {
    pub instances: usize,
    pub inside_frame: usize,
    pub unlocalized: usize,
    pub auc_scored: usize,
    pub auc_degenerate: usize,
    pub ap_scored: usize,
    pub phead_predicted_on_head: usize,
}

/// Metrics for one subgroup. `present` is false when the group has no instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub present: bool,
    pub counts: CellCounts,
    pub auc: Option<f64>,
    pub dist_avg: Option<f64>,
    pub dist_min: Option<f64>,
    pub ap: Option<f64>,
    pub p_head: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub child: MetricCell,
    pub adult: MetricCell,
    pub all: MetricCell,
    pub notes: Vec<String>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn cell(instances: &[&EvalInstance], cfg: &EvalConfig) -> Result<MetricCell, MetricsError> {
    let mut counts = CellCounts {
        instances: instances.len(),
        ..Default::default()
    };
    let mut aucs = Vec::new();
    let mut d_min = Vec::new();
    let mut d_avg = Vec::new();
    let mut ap_scores = Vec::new();
    let mut ap_labels = Vec::new();
    let mut phead = Vec::new();
    let mut phead_available = true;

    for inst in instances {
        if let (Some(in_frame), Some(score)) = (inst.in_frame, inst.prediction.inout_score) {
            ap_scores.push(score);
            ap_labels.push(in_frame);
        }
        if inst.in_frame != Some(true) {
            continue;
        }
        counts.inside_frame += 1;
        let Some(point) = inst.prediction.point else {
            counts.unlocalized += 1;
            continue;
        };
        let (mn, av) = distances(point, &inst.gt_points)?;
        d_min.push(mn);
        d_avg.push(av);
        if let Some(hm) = &inst.prediction.heatmap {
            let gt = binarize_gt(&inst.gt_points, hm.dims(), cfg.auc_radius);
            match auc(hm, &gt) {
                Ok(a) => aucs.push(a),
                Err(MetricsError::DegenerateGroundTruth) => counts.auc_degenerate += 1,
                Err(e) => return Err(e),
            }
        }
        match &inst.head_boxes {
            Some(boxes) => phead.push(PHeadInstance {
                pred_point: point,
                head_boxes: boxes.clone(),
                gt_is_head: phead_gt(&inst.gt_points, boxes, cfg.phead_rule),
            }),
            None => phead_available = false,
        }
    }
    counts.auc_scored = aucs.len();
    counts.ap_scored = ap_scores.len();
    counts.phead_predicted_on_head = phead
        .iter()
        .filter(|i| on_any_head(i.pred_point, &i.head_boxes))
        .count();

    let ap = match average_precision(&ap_scores, &ap_labels) {
        Ok(v) => Some(v),
        Err(MetricsError::NoPositives) => None,
        Err(e) => return Err(e),
    };
    let p_head = if phead_available {
        match phead_precision(&phead) {
            Ok(v) => Some(v),
            Err(MetricsError::NoPredictedPositives) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok(MetricCell {
        present: !instances.is_empty(),
        counts,
        auc: mean(&aucs),
        dist_avg: mean(&d_avg),
        dist_min: mean(&d_min),
        ap,
        p_head,
    })
}

/// Scores every instance and aggregates per group and overall.
///
/// AUC, distance and P.Head use in-frame instances only; AP uses every
/// instance with an in/out label and a score. Per-instance AUC and distances
/// are averaged; AP and P.Head pool the group's instances.
pub fn evaluate(instances: &[EvalInstance], cfg: &EvalConfig) -> Result<EvalReport, MetricsError> {
    if instances.iter().all(|i| i.in_frame.is_none()) {
        return Err(MetricsError::NoInstances);
    }
    let all: Vec<&EvalInstance> = instances.iter().collect();
    let pick = |g: Group| -> Vec<&EvalInstance> { instances.iter().filter(|i| i.group == g).collect() };
    let report_all = cell(&all, cfg)?;
    let mut notes = Vec::new();
    if instances.iter().any(|i| i.head_boxes.is_none()) {
        notes.push("P.Head omitted: head detections not provided".to_string());
    }
    if report_all.counts.auc_degenerate > 0 {
        notes.push(format!(
            "{} instance(s) skipped for AUC: binarized ground truth covers no or every cell",
            report_all.counts.auc_degenerate
        ));
    }
    Ok(EvalReport {
        child: cell(&pick(Group::Child), cfg)?,
        adult: cell(&pick(Group::Adult), cfg)?,
        all: report_all,
        notes,
    })
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let val = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
        writeln!(
            f,
            "{:<10} {:>6} {:>7} {:>7} {:>7} {:>7} {:>7}",
            "group", "n", "AUC", "Dist", "MinD", "AP", "P.Head"
        )?;
        for (name, c) in [("children", &self.child), ("adults", &self.adult), ("all", &self.all)] {
            if !c.present {
                writeln!(f, "{name:<10} {:>6} (absent)", 0)?;
                continue;
            }
            writeln!(
                f,
                "{:<10} {:>6} {:>7} {:>7} {:>7} {:>7} {:>7}",
                name,
                c.counts.instances,
                val(c.auc),
                val(c.dist_avg),
                val(c.dist_min),
                val(c.ap),
                val(c.p_head)
            )?;
        }
        for n in &self.notes {
            writeln!(f, "note: {n}")?;
        }
        Ok(())
    }
}
