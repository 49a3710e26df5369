//! Camera manifest: a TOML list of `[[view]]` tables.
//!
//! ```toml
//! [[view]]
//! fx = 88.9
//! fy = 88.9
//! cx = 32.0
//! cy = 24.0
//! width = 64
//! height = 48
//! world_to_camera = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 5.0, 0.0, 0.0, 0.0, 1.0]
//! image = "images/view_000.png"
//! [view.features]
//! clip = "features/view_000_clip.m3ft"
//! ```
//!
//! Paths are relative to the manifest's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use m3_core::scene::{Camera, CameraView};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, data_err, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ViewEntry {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    world_to_camera: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    features: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    view: Vec<ViewEntry>,
}

pub fn load_cameras(path: &Path) -> CliResult<Vec<CameraView>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read camera manifest {}: {e}", path.display())))?;
    let file: ManifestFile = toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    if file.view.is_empty() {
        return Err(config_err(format!("{} lists no views", path.display())));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let join = |p: PathBuf| if p.is_relative() { base.join(p) } else { p };
    file.view
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            if v.world_to_camera.len() != 16 {
                return Err(data_err(format!(
                    "view {i}: world_to_camera needs 16 values, got {}",
                    v.world_to_camera.len()
                )));
            }
            let m: [[f64; 4]; 4] = std::array::from_fn(|r| std::array::from_fn(|c| v.world_to_camera[r * 4 + c]));
            let camera = Camera::new(v.fx, v.fy, v.cx, v.cy, v.width, v.height, m)
                .map_err(|e| data_err(format!("view {i}: {e}")))?;
            Ok(CameraView {
                camera,
                image_path: v.image.map(join),
                feature_paths: v.features.into_iter().map(|(k, p)| (k, join(p))).collect(),
            })
        })
        .collect()
}

/// Writes `views` with paths made relative to the manifest's directory where possible.
pub fn save_cameras(path: &Path, views: &[CameraView]) -> CliResult<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    let rel = |p: &PathBuf| p.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| p.clone());
    let file = ManifestFile {
        view: views
            .iter()
            .map(|v| {
                let c = &v.camera;
                ViewEntry {
                    fx: c.fx,
                    fy: c.fy,
                    cx: c.cx,
                    cy: c.cy,
                    width: c.width,
                    height: c.height,
                    world_to_camera: c.world_to_camera.iter().flatten().copied().collect(),
                    image: v.image_path.as_ref().map(rel),
                    features: v.feature_paths.iter().map(|(k, p)| (k.clone(), rel(p))).collect(),
                }
            })
            .collect(),
    };
    std::fs::write(path, toml::to_string(&file).expect("manifest serializes"))?;
    Ok(())
}
