use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::loss::image_loss;
use super::report::{LossLog, TrainReport};
use crate::error::{dim_err, Error, Result};
use crate::feature::PixelMap;
use crate::metrics::psnr;
use crate::optim::Adam;
use crate::raster::{backward_render, Channels, PreparedView, RenderGrads};
use crate::scene::{Camera, GaussianScene};

/// A posed training image, linear RGB in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceView {
    pub camera: Camera,
    pub image: PixelMap,
}

/// Fits colors and opacities to the views; geometry stays fixed. Views are
/// visited in a seeded order that reshuffles every epoch. `heldout` views only
/// feed the final PSNR in the report.
pub fn fit_appearance(
    scene: &mut GaussianScene,
    views: &[AppearanceView],
    heldout: &[AppearanceView],
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    scene.validate()?;
    if views.len() < 2 {
        return Err(Error::Parameter(format!("appearance fitting needs at least 2 views, got {}", views.len())));
    }
    for v in views.iter().chain(heldout) {
        if (v.image.height, v.image.width, v.image.channels) != (v.camera.height, v.camera.width, 3) {
            return Err(dim_err(format!(
                "image is {}x{}x{}, camera expects {}x{}x3",
                v.image.height, v.image.width, v.image.channels, v.camera.height, v.camera.width
            )));
        }
    }
    let start = Instant::now();
    let mut report = TrainReport { iterations: config.rgb_iterations, ..TrainReport::default() };
    let channels = Channels::rgb();
    let n = scene.len();
    let mut color_opt = Adam::new(3 * n, config.lr_color);
    let mut opacity_opt = Adam::new(n, config.lr_opacity);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..views.len()).collect();
    let mut log = LossLog::new("appearance", config.log_interval);
    if config.rgb_iterations > 0 && views.iter().all(|v| PreparedView::new(scene, &v.camera).fragments.is_empty()) {
        return Err(Error::Numerical("no primitive is visible in any training view".into()));
    }

    for step in 0..config.rgb_iterations {
        if step % views.len() == 0 {
            order.shuffle(&mut rng);
        }
        let vi = order[step % views.len()];
        // opacities move, so fragments are rebuilt each step
        let view = PreparedView::new(scene, &views[vi].camera);
        let rgb = view.render(scene, &channels)?.rgb.expect("rgb rendered");
        let (loss, grad) = image_loss(&rgb, &views[vi].image)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("appearance loss became {loss} at step {step}")));
        }
        if step == 0 {
            log.record_initial(&mut report, loss, Default::default());
        }
        let g = backward_render(&view, scene, &channels, RenderGrads { rgb: Some(&grad), query_map: None })?;
        let color_grads: Vec<f64> = g.color.iter().flatten().copied().collect();
        color_opt.step_with(&color_grads, |i, d| {
            let c = &mut scene.primitives[i / 3].color_sh[i % 3];
            *c = (*c as f64 + d) as f32;
        });
        opacity_opt.step_with(&g.opacity_logit, |i, d| {
            let o = &mut scene.primitives[i].opacity_logit;
            *o = (*o as f64 + d) as f32;
        });
        if !scene.primitives.iter().all(|p| p.opacity_logit.is_finite() && p.color_sh.iter().all(|c| c.is_finite())) {
            return Err(Error::Numerical(format!("appearance parameters became non-finite at step {}", step + 1)));
        }
        log.push(&mut report, step + 1, loss, &[]);
    }
    log.flush(&mut report, config.rgb_iterations);

    if !heldout.is_empty() {
        let mut total = 0.0;
        for v in heldout {
            let rgb = PreparedView::new(scene, &v.camera).render(scene, &channels)?.rgb.expect("rgb rendered");
            total += psnr(&rgb, &v.image)?;
        }
        report.heldout_psnr = Some(total / heldout.len() as f64);
    }
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(report)
}
