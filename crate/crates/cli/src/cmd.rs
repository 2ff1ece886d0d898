use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use gazekit::dataset::{
    agreement_eval, compute_stats, pair_double_coded, parse_annotations, parse_head_detections, AgreementConfig,
    AnnotationInstance, DatasetStats, HeadDetections, StatsConfig,
};
use gazekit::formats::{self, encode_gpdm, encode_pgm_preview, encode_ply, load_depth, to_fixed_json};
use gazekit::fov::{cone2d_heatmap, cosine_field, fov_heatmap, GazeVector};
use gazekit::geometry::{self, build_eye_frame, locate_eye, to_eye_frame, CropMode};
use gazekit::grid::Grid;
use gazekit::metrics::{
    evaluate, EvalConfig, EvalInstance, EvalReport, Group, PHeadRule, Prediction, DEFAULT_AUC_RADIUS,
};
use gazekit::stability::{
    parse_crop_key, stability as run_stability, DepthProvider, FileDepthProvider, StabilityConfig, StabilityImage,
    SyntheticDepthProvider, SyntheticScene, DEFAULT_CROPS, DEFAULT_MIN_AREA_FRACTION,
};
use gazekit::supervision::{
    loss_direction, loss_heatmap, loss_inout, loss_total, pseudo_gaze_gt, render_gt_heatmap_normalized, LossParts,
    LossWeights, DEFAULT_HEATMAP_SIZE, DEFAULT_SIGMA,
};
use gazekit::Vec3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{check, pick, FileConfig, UsageError};
use crate::{EvalArgs, FovArgs, LossesArgs, Outcome, StabilityArgs, StatsArgs, UnprojectArgs};

fn parse_numbers(s: &str, n: usize) -> Result<Vec<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
        .collect::<Result<_, _>>()?;
    if v.len() != n || v.iter().any(|x| !x.is_finite()) {
        return Err(format!("expected {n} comma-separated finite numbers, got '{s}'"));
    }
    Ok(v)
}

pub fn parse_pixel(s: &str) -> Result<(usize, usize), String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|e| format!("'{p}': {e}")))
        .collect::<Result<_, String>>()?;
    match v[..] {
        [x, y] => Ok((x, y)),
        _ => Err(format!("expected a pixel 'x,y', got '{s}'")),
    }
}

pub fn parse_vec2(s: &str) -> Result<(f64, f64), String> {
    let v = parse_numbers(s, 2)?;
    Ok((v[0], v[1]))
}

pub fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let v = parse_numbers(s, 3)?;
    Ok([v[0], v[1], v[2]])
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => formats::write_file(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("cannot open {}", path.display()))?,
    ))
}

/// Reads JSON Lines into `T`, reporting `path:line` on failure.
fn read_jsonl<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| anyhow!("{}: line {}: {e}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn annotations(path: &Path) -> anyhow::Result<Vec<AnnotationInstance>> {
    parse_annotations(open(path)?).with_context(|| format!("{}", path.display()))
}

fn heads(path: Option<&PathBuf>) -> anyhow::Result<Option<HeadDetections>> {
    path.map(|p| parse_head_detections(open(p)?).with_context(|| format!("{}", p.display())))
        .transpose()
}

fn relative_to(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

#[derive(Serialize)]
struct UnprojectSummary {
    width: usize,
    height: usize,
    valid_pixels: usize,
    depth_min: Option<f64>,
    depth_max: Option<f64>,
}

pub fn unproject(a: &UnprojectArgs) -> anyhow::Result<Outcome> {
    let (depth, k) = load_depth(&a.depth, a.intrinsics.as_deref())?;
    let cloud = geometry::unproject(&depth, &k)?;
    formats::write_file(&a.out, encode_ply(&cloud).as_bytes())?;
    let z = cloud.points().iter().map(|p| p.z);
    let summary = UnprojectSummary {
        width: k.width,
        height: k.height,
        valid_pixels: cloud.len(),
        depth_min: z.clone().reduce(f64::min),
        depth_max: z.reduce(f64::max),
    };
    emit(a.summary.as_deref(), &to_fixed_json(&summary))?;
    if cloud.is_empty() {
        return Ok(Outcome::Warning(format!(
            "{} has no valid depth; wrote an empty cloud",
            a.depth.display()
        )));
    }
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct FovSummary {
    mode: &'static str,
    width: usize,
    height: usize,
    valid_pixels: usize,
    /// Gaze in the eye frame (absent in cone mode).
    gaze: Option<[f64; 3]>,
    argmax: Option<(usize, usize)>,
    max: Option<f64>,
}

pub fn fov(a: &FovArgs) -> anyhow::Result<Outcome> {
    let (depth, k) = load_depth(&a.depth, a.intrinsics.as_deref())?;
    check(a.eye.0 < k.width && a.eye.1 < k.height, || {
        format!(
            "--eye {},{} is outside the {}x{} image",
            a.eye.0, a.eye.1, k.width, k.height
        )
    })?;
    let (values, gaze) = if let Some(d) = a.gaze2d {
        let head = (a.eye.0 as f64, a.eye.1 as f64);
        let field = cone2d_heatmap(head, d, k.width, k.height).map_err(|e| UsageError(format!("--gaze2d: {e}")))?;
        (field.values, None)
    } else {
        let eye = locate_eye(&depth, &k, a.eye.0, a.eye.1)?;
        let frame = build_eye_frame(&eye)?;
        let cloud = to_eye_frame(&geometry::unproject(&depth, &k)?, &frame)?;
        let g = match (a.gaze, a.gaze_target) {
            (Some(g), _) => GazeVector::new(Vec3::from(g)).map_err(|e| UsageError(format!("--gaze: {e}")))?,
            (None, Some(px)) => pseudo_gaze_gt(&cloud, px)?,
            (None, None) => unreachable!("clap requires a gaze source"),
        };
        let field = fov_heatmap(&cosine_field(&cloud, &g)?);
        let masked = Grid::from_fn(k.width, k.height, |x, y| {
            if field.valid.get(x, y) == Some(&true) {
                *field.values.get(x, y).expect("in bounds")
            } else {
                f64::NAN
            }
        });
        let v = g.as_vec();
        (masked, Some([v.x, v.y, v.z]))
    };
    formats::write_file(&a.out, &encode_gpdm(&values))?;
    if let Some(p) = &a.preview {
        formats::write_file(p, &encode_pgm_preview(&values))?;
    }
    let argmax = values.argmax();
    let summary = FovSummary {
        mode: if a.cone { "cone2d" } else { "fov" },
        width: k.width,
        height: k.height,
        valid_pixels: values.as_slice().iter().filter(|v| !v.is_nan()).count(),
        gaze,
        argmax,
        max: argmax.and_then(|(x, y)| values.get(x, y).copied()),
    };
    emit(a.summary.as_deref(), &to_fixed_json(&summary))?;
    Ok(Outcome::Done)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionRow {
    instance_id: String,
    #[serde(default)]
    point: Option<(f64, f64)>,
    /// GPDM heatmap, relative to the predictions file.
    #[serde(default)]
    heatmap_path: Option<PathBuf>,
    #[serde(default)]
    inout_score: Option<f64>,
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    auc_radius: f64,
    phead_rule: PHeadRule,
    subset: &'static str,
    excluded_other_labels: usize,
    report: &'a EvalReport,
}

pub fn eval(a: &EvalArgs, file: &FileConfig) -> anyhow::Result<Outcome> {
    let cfg = EvalConfig {
        auc_radius: pick(a.auc_radius, file.auc_radius, DEFAULT_AUC_RADIUS),
        phead_rule: pick(a.phead_rule, file.phead_rule, PHeadRule::Single),
    };
    check(cfg.auc_radius >= 0.0 && cfg.auc_radius.is_finite(), || {
        "--auc-radius must be a non-negative number".into()
    })?;
    let anns = annotations(&a.annotations)?;
    let heads = heads(a.heads.as_ref())?;

    let mut preds: BTreeMap<String, Prediction> = BTreeMap::new();
    for row in read_jsonl::<PredictionRow>(&a.predictions)? {
        let heatmap = match &row.heatmap_path {
            Some(p) => {
                let p = relative_to(&a.predictions, p);
                Some(formats::decode_gpdm(&formats::read_file(&p)?).with_context(|| format!("{}", p.display()))?)
            }
            None => None,
        };
        let point = row
            .point
            .or_else(|| heatmap.as_ref().and_then(gazekit::metrics::heatmap_point));
        let pred = Prediction {
            point,
            heatmap,
            inout_score: row.inout_score,
        };
        if preds.insert(row.instance_id.clone(), pred).is_some() {
            bail!(
                "{}: duplicate prediction for {}",
                a.predictions.display(),
                row.instance_id
            );
        }
    }

    let wanted = |g: Group| match (a.only_children, a.only_adults) {
        (true, _) => g == Group::Child,
        (_, true) => g == Group::Adult,
        _ => true,
    };
    let mut instances = Vec::new();
    let mut excluded = 0;
    let mut used = BTreeSet::new();
    for ann in anns.iter().filter(|i| wanted(i.group())) {
        let id = ann.instance_id();
        let Some(in_frame) = ann.gaze_label.in_frame() else {
            excluded += 1;
            continue;
        };
        let prediction = preds
            .get(&id)
            .cloned()
            .ok_or_else(|| anyhow!("{}: no prediction for {id}", a.predictions.display()))?;
        used.insert(id.clone());
        instances.push(EvalInstance {
            id,
            group: ann.group(),
            in_frame: Some(in_frame),
            gt_points: ann.gaze_point.into_iter().collect(),
            head_boxes: heads.as_ref().map(|h| h.boxes(&ann.video_id, ann.frame).to_vec()),
            prediction,
        });
    }
    let all_ids: BTreeSet<String> = anns.iter().map(|i| i.instance_id()).collect();
    if let Some(stray) = preds.keys().find(|k| !all_ids.contains(*k)) {
        bail!("{}: prediction {stray} matches no annotation", a.predictions.display());
    }
    instances.sort_by(|x, y| x.id.cmp(&y.id));
    let report = evaluate(&instances, &cfg)?;
    let out = EvalOutput {
        auc_radius: cfg.auc_radius,
        phead_rule: cfg.phead_rule,
        subset: match (a.only_children, a.only_adults) {
            (true, _) => "children",
            (_, true) => "adults",
            _ => "all",
        },
        excluded_other_labels: excluded,
        report: &report,
    };
    emit(a.out.as_deref(), &to_fixed_json(&out))?;
    if let Some(p) = &a.text {
        formats::write_file(p, report.to_string().as_bytes())?;
    } else if a.out.is_some() {
        print!("{report}");
    }
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct Agreement {
    pairs: usize,
    unmatched: Vec<String>,
    report: EvalReport,
}

#[derive(Serialize)]
struct StatsOutput {
    stats: DatasetStats,
    agreement: Option<Agreement>,
}

pub fn stats(a: &StatsArgs, file: &FileConfig) -> anyhow::Result<Outcome> {
    let first = annotations(&a.annotations)?;
    let heads = heads(a.heads.as_ref())?;
    let stats = compute_stats(&first, heads.as_ref(), &StatsConfig::default())?;
    let agreement = match &a.second_pass {
        Some(p) => {
            let cfg = AgreementConfig {
                heatmap_size: pick(a.hm_size, file.hm_size, DEFAULT_HEATMAP_SIZE),
                sigma: pick(a.gt_sigma, file.gt_sigma, DEFAULT_SIGMA),
                eval: EvalConfig {
                    auc_radius: pick(a.auc_radius, file.auc_radius, DEFAULT_AUC_RADIUS),
                    phead_rule: pick(a.phead_rule, file.phead_rule, PHeadRule::Single),
                },
            };
            check(cfg.heatmap_size > 0, || "--hm-size must be positive".into())?;
            check(cfg.sigma > 0.0 && cfg.sigma.is_finite(), || {
                "--gt-sigma must be positive".into()
            })?;
            check(cfg.eval.auc_radius >= 0.0, || {
                "--auc-radius must be non-negative".into()
            })?;
            let second = annotations(p)?;
            let (pairs, unmatched) = pair_double_coded(&first, &second);
            Some(Agreement {
                pairs: pairs.len(),
                unmatched: unmatched
                    .into_iter()
                    .map(|(v, f, person)| format!("{v}/{f}/{person}"))
                    .collect(),
                report: agreement_eval(&pairs, &cfg, heads.as_ref())?,
            })
        }
        None => None,
    };
    emit(a.out.as_deref(), &to_fixed_json(&StatsOutput { stats, agreement }))?;
    Ok(Outcome::Done)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRow {
    image_id: String,
    width: usize,
    height: usize,
    eye_px: (usize, usize),
    gaze_px: (usize, usize),
    /// Crop key `x,y,w,h` to raster path, relative to the manifest.
    #[serde(default)]
    depth_paths: Option<BTreeMap<String, PathBuf>>,
    #[serde(default)]
    synthetic: Option<SyntheticScene>,
}

pub fn stability(a: &StabilityArgs, file: &FileConfig, seed: u64) -> anyhow::Result<Outcome> {
    let cfg = StabilityConfig {
        mode: pick(a.mode, file.mode, CropMode::Consistent),
        crops_per_image: pick(a.crops, file.crops, DEFAULT_CROPS),
        min_area_fraction: pick(a.min_area_fraction, file.min_area_fraction, DEFAULT_MIN_AREA_FRACTION),
        seed,
    };
    check(cfg.crops_per_image > 0, || "--crops must be at least 1".into())?;
    check(cfg.min_area_fraction > 0.0 && cfg.min_area_fraction <= 1.0, || {
        "--min-area-fraction must lie in (0, 1]".into()
    })?;
    let mut images = Vec::new();
    for row in read_jsonl::<ManifestRow>(&a.manifest)? {
        let provider: Box<dyn DepthProvider> = match (row.depth_paths, row.synthetic) {
            (Some(paths), None) => {
                let mut rasters = BTreeMap::new();
                for (key, path) in paths {
                    let crop = parse_crop_key(&key).ok_or_else(|| {
                        anyhow!("{}: bad crop key '{key}' for {}", a.manifest.display(), row.image_id)
                    })?;
                    rasters.insert(crop, relative_to(&a.manifest, &path));
                }
                Box::new(FileDepthProvider::new(rasters))
            }
            (None, Some(scene)) => Box::new(
                SyntheticDepthProvider::new(scene, row.width, row.height)
                    .with_context(|| format!("image {}", row.image_id))?,
            ),
            _ => bail!(
                "{}: image {} needs exactly one of depth_paths or synthetic",
                a.manifest.display(),
                row.image_id
            ),
        };
        images.push(StabilityImage {
            image_id: row.image_id,
            width: row.width,
            height: row.height,
            eye_px: row.eye_px,
            gaze_px: row.gaze_px,
            provider,
        });
    }
    let result = run_stability(&images, &cfg)?;
    emit(a.out.as_deref(), &to_fixed_json(&result))?;
    Ok(Outcome::Done)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LossRow {
    #[serde(default)]
    id: Option<String>,
    g_p: [f64; 3],
    /// `null` when the row has no direction target.
    g_gt: Option<[f64; 3]>,
    /// Row-major predicted heatmap.
    pred_heatmap: Vec<Vec<f64>>,
    /// Normalized gaze point; `null` for out-of-frame rows.
    gaze_point: Option<(f64, f64)>,
    o_p: f64,
    o_gt: f64,
}

#[derive(Serialize)]
struct LossValues {
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    heatmap: f64,
    direction: f64,
    inout: f64,
    total: f64,
}

#[derive(Serialize)]
struct LossesOutput {
    weights: LossWeights,
    gt_sigma: f64,
    rows: Vec<LossValues>,
    mean: LossValues,
}

pub fn losses(a: &LossesArgs, file: &FileConfig) -> anyhow::Result<Outcome> {
    let d = LossWeights::default();
    let weights = LossWeights {
        lambda_hm: pick(a.lambda_hm, file.lambda_hm, d.lambda_hm),
        lambda_dir: pick(a.lambda_dir, file.lambda_dir, d.lambda_dir),
        lambda_io: pick(a.lambda_io, file.lambda_io, d.lambda_io),
    };
    let sigma = pick(a.gt_sigma, file.gt_sigma, DEFAULT_SIGMA);
    check(
        [weights.lambda_hm, weights.lambda_dir, weights.lambda_io]
            .iter()
            .all(|l| l.is_finite() && *l >= 0.0),
        || "loss weights must be finite and non-negative".into(),
    )?;
    check(sigma > 0.0 && sigma.is_finite(), || {
        "--gt-sigma must be positive".into()
    })?;

    let rows = read_jsonl::<LossRow>(&a.input)?;
    if rows.is_empty() {
        bail!("{}: no rows", a.input.display());
    }
    let mut out = Vec::with_capacity(rows.len());
    for (i, row) in rows.into_iter().enumerate() {
        let at = || format!("{}: row {}", a.input.display(), i + 1);
        let h = row.pred_heatmap.len();
        let w = row.pred_heatmap.first().map_or(0, Vec::len);
        let pred = Grid::from_vec(w, h, row.pred_heatmap.concat())
            .filter(|_| w > 0)
            .ok_or_else(|| anyhow!("{}: pred_heatmap must be a non-empty rectangle", at()))?;
        let heatmap = match row.gaze_point {
            Some(p) => loss_heatmap(
                &pred,
                &render_gt_heatmap_normalized(p, (w, h), sigma).with_context(at)?.values,
            )
            .with_context(at)?,
            None => 0.0,
        };
        let direction = match row.g_gt {
            Some(g) => loss_direction(&Vec3::from(row.g_p), &Vec3::from(g)).with_context(at)?,
            None => 0.0,
        };
        let parts = LossParts {
            heatmap,
            direction,
            inout: loss_inout(row.o_p, row.o_gt),
        };
        out.push(LossValues {
            id: row.id,
            heatmap: parts.heatmap,
            direction: parts.direction,
            inout: parts.inout,
            total: loss_total(&parts, &weights),
        });
    }
    let n = out.len() as f64;
    let avg = |f: fn(&LossValues) -> f64| out.iter().map(f).sum::<f64>() / n;
    let mean = LossValues {
        id: None,
        heatmap: avg(|r| r.heatmap),
        direction: avg(|r| r.direction),
        inout: avg(|r| r.inout),
        total: avg(|r| r.total),
    };
    let result = LossesOutput {
        weights,
        gt_sigma: sigma,
        rows: out,
        mean,
    };
    emit(a.out.as_deref(), &to_fixed_json(&result))?;
    Ok(Outcome::Done)
}
