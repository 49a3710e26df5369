//! One module per subcommand, plus the loaders they share. Every command
//! checks its inputs before computing anything or creating output files.

pub mod eval;
pub mod fit_rgb;
pub mod pca;
pub mod query;
pub mod reduce;
pub mod render;
pub mod synth;
pub mod train;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use m3_core::bank::MemoryBank;
use m3_core::feature::{FeatureTensor, PixelMap};
use m3_core::scene::{CameraView, GaussianScene};

use crate::config::{check_exists, RunConfig};
use crate::error::{config_err, data_err, CliResult};
use crate::manifest::load_cameras;

pub(crate) fn load_scene(cfg: &RunConfig) -> CliResult<GaussianScene> {
    let path = cfg.require(&cfg.scene, "scene")?;
    check_exists(path, "scene")?;
    Ok(GaussianScene::load(path)?)
}

pub(crate) fn load_views(cfg: &RunConfig) -> CliResult<Vec<CameraView>> {
    let path = cfg.require(&cfg.cameras, "cameras")?;
    check_exists(path, "cameras")?;
    load_cameras(path)
}

/// `(training, held-out)` view indices.
pub(crate) fn split_views(cfg: &RunConfig, count: usize) -> CliResult<(Vec<usize>, Vec<usize>)> {
    let holdout: BTreeSet<usize> = cfg.holdout.iter().flatten().copied().collect();
    if let Some(&bad) = holdout.iter().find(|&&i| i >= count) {
        return Err(config_err(format!("holdout index {bad} but the manifest has {count} views")));
    }
    let train: Vec<usize> = (0..count).filter(|i| !holdout.contains(i)).collect();
    Ok((train, holdout.into_iter().collect()))
}

/// Where one model's per-view features come from.
pub(crate) enum FeatureSource {
    PerView(Vec<PathBuf>),
    Stacked(PathBuf),
}

impl FeatureSource {
    /// Per-view files from the manifest win; otherwise a multi-view tensor
    /// from the config's `features.<model>`, aligned with the manifest.
    pub(crate) fn resolve(cfg: &RunConfig, views: &[CameraView], model: &str) -> CliResult<Self> {
        let per_view: Vec<Option<&PathBuf>> = views.iter().map(|v| v.feature_paths.get(model)).collect();
        if per_view.iter().all(Option::is_some) {
            let paths: Vec<PathBuf> = per_view.into_iter().flatten().cloned().collect();
            for p in &paths {
                check_exists(p, &format!("features.{model}"))?;
            }
            return Ok(FeatureSource::PerView(paths));
        }
        let path = cfg.features.get(model).ok_or_else(|| {
            config_err(format!("no features for model '{model}' in the camera manifest or the config"))
        })?;
        check_exists(path, &format!("features.{model}"))?;
        Ok(FeatureSource::Stacked(path.clone()))
    }

    /// Feature maps for the listed views, checked against their cameras.
    pub(crate) fn load(&self, views: &[CameraView], which: &[usize]) -> CliResult<Vec<PixelMap>> {
        let maps = match self {
            FeatureSource::PerView(paths) => which
                .iter()
                .map(|&i| {
                    let t = FeatureTensor::load(&paths[i])?;
                    if t.n_views != 1 {
                        return Err(data_err(format!("{} holds {} views, expected 1", paths[i].display(), t.n_views)));
                    }
                    Ok(t.view_map(0))
                })
                .collect::<CliResult<Vec<_>>>()?,
            FeatureSource::Stacked(path) => {
                let t = FeatureTensor::load(path)?;
                if t.n_views != views.len() {
                    return Err(data_err(format!(
                        "{} holds {} views but the manifest lists {}",
                        path.display(),
                        t.n_views,
                        views.len()
                    )));
                }
                which.iter().map(|&i| t.view_map(i)).collect()
            }
        };
        for (map, &i) in maps.iter().zip(which) {
            let cam = &views[i].camera;
            if (map.height, map.width) != (cam.height, cam.width) {
                return Err(data_err(format!(
                    "view {i}: features are {}x{}, camera is {}x{}",
                    map.height, map.width, cam.height, cam.width
                )));
            }
        }
        Ok(maps)
    }
}

/// Models with features anywhere in the config or the manifest.
pub(crate) fn feature_models(cfg: &RunConfig, views: &[CameraView]) -> BTreeSet<String> {
    let mut models: BTreeSet<String> = cfg.features.keys().cloned().collect();
    for v in views {
        models.extend(v.feature_paths.keys().cloned());
    }
    models
}

/// Bank path per model: `bank.<model>` if configured, else `<out>/bank_<model>.m3pb`.
pub(crate) fn bank_path(cfg: &RunConfig, model: &str) -> PathBuf {
    cfg.bank.get(model).cloned().unwrap_or_else(|| cfg.out_dir().join(format!("bank_{model}.m3pb")))
}

/// Banks for every query slice of the scene, in layout order.
pub(crate) fn load_scene_banks(cfg: &RunConfig, scene: &GaussianScene) -> CliResult<Vec<MemoryBank>> {
    let mut banks = Vec::new();
    for slice in scene.layout.slices() {
        let path = bank_path(cfg, &slice.name);
        check_exists(&path, &format!("bank.{}", slice.name))?;
        let bank = MemoryBank::load(&path)?;
        if bank.model_name != slice.name {
            return Err(data_err(format!(
                "{} holds a bank for '{}', expected '{}'",
                path.display(),
                bank.model_name,
                slice.name
            )));
        }
        banks.push(bank);
    }
    Ok(banks)
}

pub(crate) fn create_out_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| data_err(format!("cannot create {}: {e}", dir.display())))
}

/// Writes `records` as one JSON object per line.
pub(crate) fn write_jsonl<T: serde::Serialize>(path: &Path, records: &[T]) -> CliResult<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub(crate) fn view_name(i: usize) -> String {
    format!("view_{i:03}")
}
