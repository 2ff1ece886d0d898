use std::fmt;
use std::path::Path;

use gazekit::geometry::CropMode;
use gazekit::metrics::PHeadRule;
use serde::Deserialize;

/// Invalid invocation: bad flag values, conflicting options, bad config file.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Defaults read from `--config`. Keys mirror the long flags.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub gt_sigma: Option<f64>,
    pub hm_size: Option<usize>,
    pub auc_radius: Option<f64>,
    pub phead_rule: Option<PHeadRule>,
    pub lambda_hm: Option<f64>,
    pub lambda_dir: Option<f64>,
    pub lambda_io: Option<f64>,
    pub mode: Option<CropMode>,
    pub crops: Option<usize>,
    pub min_area_fraction: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())))
    }
}

/// Flag value, else config value, else default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

pub fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), UsageError> {
    if ok {
        Ok(())
    } else {
        Err(UsageError(msg()))
    }
}
