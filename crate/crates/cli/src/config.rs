//! Run configuration: a TOML file with fixed keys, overridable from flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use m3_core::attention::Temperature;
use m3_core::bank::{DEFAULT_CHUNK, DEFAULT_THETA};
use m3_core::metrics::Pooling;
use m3_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, CliResult};

pub const DEFAULT_DEGREE: usize = 16;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scene: Option<PathBuf>,
    pub cameras: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Multi-view feature tensors aligned with the camera manifest.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub features: BTreeMap<String, PathBuf>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub bank: BTreeMap<String, PathBuf>,
    /// Precomputed feature predictions to score against `features`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub pred: BTreeMap<String, PathBuf>,
    pub theta: Option<f32>,
    pub chunk: Option<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub degrees: BTreeMap<String, usize>,
    pub iters: Option<usize>,
    pub rgb_iters: Option<usize>,
    pub points: Option<usize>,
    pub lambda_cos: Option<f64>,
    pub lambda_l2: Option<f64>,
    pub lr_query: Option<f64>,
    pub lr_w_m: Option<f64>,
    pub lr_color: Option<f64>,
    pub lr_opacity: Option<f64>,
    pub log_interval: Option<usize>,
    pub seed: Option<u64>,
    pub temperature: Option<Temperature>,
    /// Camera indices kept out of training.
    pub holdout: Option<Vec<usize>>,
    pub query: Option<PathBuf>,
    pub query_row: Option<usize>,
    pub model: Option<String>,
    pub retrieval: Option<PathBuf>,
    pub grounding: Option<PathBuf>,
    pub pooling: Option<Pooling>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Parses a config file; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.scene,
            &mut self.cameras,
            &mut self.out,
            &mut self.query,
            &mut self.retrieval,
            &mut self.grounding,
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
        for map in [&mut self.features, &mut self.bank, &mut self.pred] {
            for p in map.values_mut() {
                resolve(base, p);
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn theta(&self) -> f32 {
        self.theta.unwrap_or(DEFAULT_THETA)
    }

    pub fn chunk(&self) -> usize {
        self.chunk.unwrap_or(DEFAULT_CHUNK)
    }

    pub fn degree(&self, model: &str) -> usize {
        self.degrees.get(model).copied().unwrap_or(DEFAULT_DEGREE)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn temperature(&self) -> Temperature {
        self.temperature.unwrap_or_default()
    }

    pub fn train_config(&self) -> CliResult<TrainConfig> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            iterations: self.iters.unwrap_or(d.iterations),
            rgb_iterations: self.rgb_iters.unwrap_or(d.rgb_iterations),
            points: self.points.unwrap_or(d.points),
            lambda_cos: self.lambda_cos.unwrap_or(d.lambda_cos),
            lambda_l2: self.lambda_l2.unwrap_or(d.lambda_l2),
            lr_query: self.lr_query.unwrap_or(d.lr_query),
            lr_w_m: self.lr_w_m.unwrap_or(d.lr_w_m),
            lr_color: self.lr_color.unwrap_or(d.lr_color),
            lr_opacity: self.lr_opacity.unwrap_or(d.lr_opacity),
            seed: self.seed(),
            temperature: self.temperature(),
            log_interval: self.log_interval.unwrap_or(d.log_interval),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn require<'a, T>(&self, value: &'a Option<T>, key: &str) -> CliResult<&'a T> {
        value.as_ref().ok_or_else(|| config_err(format!("missing required setting '{key}'")))
    }
}

/// Fails with a config error naming `key` unless `path` exists.
pub fn check_exists(path: &Path, key: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(config_err(format!("{key}: {} does not exist", path.display())))
    }
}
