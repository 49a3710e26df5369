use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use m3_core::feature::FeatureTensor;
use m3_core::scene::CameraView;
use m3_core::synthetic::{generate, SyntheticConfig};

use super::{create_out_dir, view_name};
use crate::config::RunConfig;
use crate::error::CliResult;
use crate::imageio::write_rgb;
use crate::manifest::save_cameras;

pub const SYNTH_MODEL: &str = "feat";

/// Writes a small synthetic dataset with known answers: a wall of colored
/// primitives, posed images, per-view features drawn from a known bank, the
/// bank rows as a query file and a ready-to-use `config.toml`.
pub fn run(out: &Path, seed: u64) -> CliResult<()> {
    let synth = generate(&SyntheticConfig { seed, ..SyntheticConfig::default() })?;
    for sub in ["images", "features"] {
        create_out_dir(&out.join(sub))?;
    }
    synth.initial.save(out.join("initial.m3gs"))?;
    synth.truth.save(out.join("truth.m3gs"))?;
    let mut cameras = Vec::new();
    for (i, view) in synth.train.iter().chain(&synth.heldout).enumerate() {
        let image = out.join("images").join(format!("{}.png", view_name(i)));
        let features = out.join("features").join(format!("{}_{SYNTH_MODEL}.m3ft", view_name(i)));
        write_rgb(&image, &view.image)?;
        FeatureTensor::from_maps(SYNTH_MODEL, std::slice::from_ref(&view.features))?.save(&features)?;
        cameras.push(CameraView {
            camera: view.camera.clone(),
            image_path: Some(image),
            feature_paths: BTreeMap::from([(SYNTH_MODEL.to_string(), features)]),
        });
    }
    save_cameras(&out.join("cameras.toml"), &cameras)?;
    FeatureTensor::embedding_list(SYNTH_MODEL, synth.dim, synth.bank_rows.clone())?.save(out.join("query.m3ft"))?;

    let n_train = synth.train.len();
    let config = RunConfig {
        scene: Some(PathBuf::from("initial.m3gs")),
        cameras: Some(PathBuf::from("cameras.toml")),
        out: Some(PathBuf::from("out")),
        degrees: BTreeMap::from([(SYNTH_MODEL.to_string(), 16)]),
        iters: Some(2000),
        rgb_iters: Some(2000),
        seed: Some(seed),
        holdout: Some((n_train..cameras.len()).collect()),
        query: Some(PathBuf::from("query.m3ft")),
        query_row: Some(0),
        model: Some(SYNTH_MODEL.to_string()),
        ..RunConfig::default()
    };
    std::fs::write(out.join("config.toml"), config.to_toml())?;
    println!(
        "{} views ({} held out), {} primitives -> {}",
        cameras.len(),
        cameras.len() - n_train,
        synth.truth.len(),
        out.display()
    );
    Ok(())
}
