use m3_core::scene::CameraView;
use m3_core::train::{fit_appearance, AppearanceView};

use super::{create_out_dir, load_scene, load_views, split_views};
use crate::config::{check_exists, RunConfig};
use crate::error::{config_err, CliResult};
use crate::imageio::read_rgb;

pub(crate) fn appearance_views(views: &[CameraView], which: &[usize]) -> CliResult<Vec<AppearanceView>> {
    let mut out = Vec::with_capacity(which.len());
    for &i in which {
        let path = views[i].image_path.as_ref().ok_or_else(|| config_err(format!("view {i} has no image")))?;
        check_exists(path, &format!("view {i} image"))?;
        out.push(AppearanceView { camera: views[i].camera.clone(), image: read_rgb(path)? });
    }
    Ok(out)
}

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let train_cfg = cfg.train_config()?;
    let mut scene = load_scene(cfg)?;
    let views = load_views(cfg)?;
    let (train, heldout) = split_views(cfg, views.len())?;
    for &i in train.iter().chain(&heldout) {
        let path = views[i].image_path.as_ref().ok_or_else(|| config_err(format!("view {i} has no image")))?;
        check_exists(path, &format!("view {i} image"))?;
    }
    let train = appearance_views(&views, &train)?;
    let heldout = appearance_views(&views, &heldout)?;

    let report = fit_appearance(&mut scene, &train, &heldout, &train_cfg)?;
    let out = cfg.out_dir();
    create_out_dir(&out)?;
    scene.save(out.join("scene.m3gs"))?;
    report.save(out.join("report_rgb.jsonl"))?;
    if let Some(last) = report.records.last() {
        println!("final appearance loss {:.6} after {} steps", last.loss, report.iterations);
    }
    match report.heldout_psnr {
        Some(p) => println!("held-out PSNR {p:.2} dB"),
        None => println!("no held-out views"),
    }
    Ok(())
}
