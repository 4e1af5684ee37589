use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::CliError;

/// Training run description. Relative paths resolve against the directory
/// of the config file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub train_data: PathBuf,
    #[serde(default)]
    pub val_data: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    /// Metric of the validation `D^M` column.
    #[serde(default = "default_validation_metric")]
    pub validation_metric: String,
    #[serde(default)]
    pub phases: Vec<PhaseConfig>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub scales: Option<usize>,
    pub channels: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    /// `mean_dice`, `binary_dice` or `wasserstein`.
    pub loss: String,
    /// Metric spec for `wasserstein`; defaults to `tree`.
    #[serde(default)]
    pub metric: Option<String>,
    pub epochs: usize,
    pub learning_rate: f64,
}

fn default_batch() -> usize {
    8
}

fn default_momentum() -> f64 {
    0.9
}

fn default_validation_metric() -> String {
    "tree".into()
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(path.display(), e))?;
        let mut cfg: TrainConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| CliError::input(path.display(), e))?,
            _ => toml::from_str(&text).map_err(|e| CliError::input(path.display(), e))?,
        };
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.train_data, &mut cfg.checkpoint, &mut cfg.log] {
            *p = base.join(&*p);
        }
        if let Some(v) = cfg.val_data.as_mut() {
            *v = base.join(&*v);
        }
        let resolve = |spec: &mut String| {
            if !crate::commands::is_builtin_metric(spec) {
                *spec = base.join(&*spec).display().to_string();
            }
        };
        resolve(&mut cfg.validation_metric);
        for ph in &mut cfg.phases {
            if let Some(m) = ph.metric.as_mut() {
                resolve(m);
            }
        }
        Ok(cfg)
    }
}
