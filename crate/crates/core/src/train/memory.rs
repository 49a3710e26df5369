use std::collections::BTreeMap;
use std::ops::Range;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::loss::{paired_rows_loss, sample_pixels, LossWeights};
use super::report::{LossLog, TrainReport};
use crate::attention::{attend, attend_backward, Temperature};
use crate::bank::MemoryBank;
use crate::error::{dim_err, Error, Result};
use crate::feature::PixelMap;
use crate::metrics::{cosine_l2_maps, FeatureDistances};
use crate::optim::Adam;
use crate::pipeline::model_range;
use crate::raster::{backward_render, Channels, PreparedView, RenderGrads};
use crate::scene::{Camera, GaussianScene};

/// A posed view with one ground-truth feature map per model.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureView {
    pub camera: Camera,
    pub features: BTreeMap<String, PixelMap>,
}

fn check_inputs(scene: &GaussianScene, views: &[FeatureView], banks: &[MemoryBank]) -> Result<Vec<Range<usize>>> {
    scene.validate()?;
    if banks.is_empty() {
        return Err(Error::Config("no memory banks to train".into()));
    }
    let mut ranges = Vec::with_capacity(banks.len());
    for (b, bank) in banks.iter().enumerate() {
        if banks[..b].iter().any(|o| o.model_name == bank.model_name) {
            return Err(Error::Config(format!("model '{}' has two banks", bank.model_name)));
        }
        bank.validate()?;
        ranges.push(model_range(scene, bank)?);
    }
    for (v, view) in views.iter().enumerate() {
        for bank in banks {
            let gt = view
                .features
                .get(&bank.model_name)
                .ok_or_else(|| Error::Config(format!("view {v} has no features for model '{}'", bank.model_name)))?;
            if (gt.height, gt.width, gt.channels) != (view.camera.height, view.camera.width, bank.dim) {
                return Err(dim_err(format!(
                    "view {v} features for '{}' are {}x{}x{}, expected {}x{}x{}",
                    bank.model_name, gt.height, gt.width, gt.channels, view.camera.height, view.camera.width, bank.dim
                )));
            }
            if !gt.is_finite() {
                return Err(Error::Parameter(format!("view {v} features for '{}' are not finite", bank.model_name)));
            }
        }
    }
    Ok(ranges)
}

fn gather(map: &PixelMap, pixels: &[usize], channels: Range<usize>) -> PixelMap {
    let data = pixels.iter().flat_map(|&i| map.pixel(i)[channels.clone()].iter().copied()).collect();
    PixelMap::from_data(1, pixels.len(), channels.len(), data).expect("gathered rows match their shape")
}

/// Fits per-primitive queries and each bank's projection so that attended
/// renders match the views' features. Views are visited round-robin; every
/// step samples `config.points` pixels per model, shared by prediction and
/// ground truth. Geometry, colors, opacities and PSC rows stay fixed.
///
/// With a learned temperature the final scale is folded into each bank's
/// projection, so the trained banks are meant to be used with
/// [`Temperature::InvSqrtD`].
pub fn fit_memory(
    scene: &mut GaussianScene,
    views: &[FeatureView],
    heldout: &[FeatureView],
    banks: &mut [MemoryBank],
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    let ranges = check_inputs(scene, views, banks)?;
    check_inputs(scene, heldout, banks)?;
    if views.is_empty() && config.iterations > 0 {
        return Err(Error::Config("no training views".into()));
    }
    let start = Instant::now();
    let mut report = TrainReport { iterations: config.iterations, ..TrainReport::default() };
    let weights = LossWeights { cos: config.lambda_cos, l2: config.lambda_l2 };
    let l = scene.query_len();
    let channels = Channels::query(0..l);
    // geometry and opacity are frozen: fragments never change
    let prepared: Vec<PreparedView> = views.iter().map(|v| PreparedView::new(scene, &v.camera)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut query_opt = Adam::new(scene.len() * l, config.lr_query);
    let mut w_opts: Vec<Adam> = banks.iter().map(|b| Adam::new(b.w_m.len(), config.lr_w_m)).collect();
    let mut lambdas: Vec<f64> = match config.temperature {
        Temperature::Learned(lambda) => vec![lambda; banks.len()],
        _ => Vec::new(),
    };
    let mut lambda_opt = Adam::new(lambdas.len(), config.lr_w_m);
    let mut log = LossLog::new("memory", config.log_interval);

    for step in 0..config.iterations {
        let vi = step % views.len();
        let view = &prepared[vi];
        let rendered = view.render(scene, &channels)?.query_map.expect("queries rendered");
        let mut query_grad = PixelMap::zeros(view.height, view.width, l);
        let mut w_grads = Vec::with_capacity(banks.len());
        let mut lambda_grads = Vec::with_capacity(lambdas.len());
        let mut model_losses = Vec::with_capacity(banks.len());
        let mut total = 0.0;
        for (b, bank) in banks.iter().enumerate() {
            let temperature = lambdas.get(b).map_or(config.temperature, |&x| Temperature::Learned(x));
            let pixels = sample_pixels(&mut rng, rendered.pixel_count(), config.points);
            let queries = gather(&rendered, &pixels, ranges[b].clone());
            let pred = attend(&queries, bank, temperature, false)?.features;
            let gt = gather(&views[vi].features[&bank.model_name], &pixels, 0..bank.dim);
            let mut row_grad = PixelMap::zeros(1, pixels.len(), bank.dim);
            let loss = paired_rows_loss(&pred.data, &gt.data, bank.dim, weights, &mut row_grad.data);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "feature loss for '{}' became {loss} at step {step}",
                    bank.model_name
                )));
            }
            let g = attend_backward(&queries, bank, temperature, &row_grad)?;
            for (r, &p) in pixels.iter().enumerate() {
                for (dst, src) in query_grad.pixel_mut(p)[ranges[b].clone()].iter_mut().zip(g.query.pixel(r)) {
                    *dst += src;
                }
            }
            w_grads.push(g.w_m);
            if let Some(dl) = g.temperature {
                lambda_grads.push(dl);
            }
            total += loss;
            model_losses.push((bank.model_name.clone(), loss));
        }
        if step == 0 {
            log.record_initial(&mut report, total, model_losses.iter().cloned().collect());
        }

        let grads = backward_render(view, scene, &channels, RenderGrads { rgb: None, query_map: Some(&query_grad) })?;
        query_opt.step_with(&grads.query, |i, d| {
            let q = &mut scene.primitives[i / l].query[i % l];
            *q = (*q as f64 + d) as f32;
        });
        for ((bank, opt), g) in banks.iter_mut().zip(&mut w_opts).zip(&w_grads) {
            opt.step(&mut bank.w_m, g);
        }
        if !lambdas.is_empty() {
            lambda_opt.step_with(&lambda_grads, |i, d| lambdas[i] += d);
        }
        let finite = scene.primitives.iter().all(|p| p.query.iter().all(|v| v.is_finite()))
            && banks.iter().all(|b| b.w_m.iter().all(|v| v.is_finite()))
            && lambdas.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Numerical(format!("parameters became non-finite at step {}", step + 1)));
        }
        log.push(&mut report, step + 1, total, &model_losses);
    }
    log.flush(&mut report, config.iterations);

    for (bank, lambda) in banks.iter_mut().zip(&lambdas) {
        bank.w_m.iter_mut().for_each(|w| *w = (*w as f64 * lambda) as f32);
    }
    let eval_temperature = if lambdas.is_empty() { config.temperature } else { Temperature::InvSqrtD };
    if !heldout.is_empty() {
        report.heldout = evaluate_features(scene, heldout, banks, eval_temperature)?;
    }
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Mean feature distances per model over `views`.
pub fn evaluate_features(
    scene: &GaussianScene,
    views: &[FeatureView],
    banks: &[MemoryBank],
    temperature: Temperature,
) -> Result<BTreeMap<String, FeatureDistances>> {
    let ranges = check_inputs(scene, views, banks)?;
    if views.is_empty() {
        return Err(Error::Config("no evaluation views".into()));
    }
    let l = scene.query_len();
    let mut sums: BTreeMap<String, FeatureDistances> = BTreeMap::new();
    for view in views {
        let queries = PreparedView::new(scene, &view.camera)
            .render(scene, &Channels::query(0..l))?
            .query_map
            .expect("queries rendered");
        for (bank, range) in banks.iter().zip(&ranges) {
            let pred = attend(&queries.slice_channels(range.clone()), bank, temperature, false)?.features;
            let d = cosine_l2_maps(&pred, &view.features[&bank.model_name])?;
            let e = sums.entry(bank.model_name.clone()).or_insert(FeatureDistances { cosine: 0.0, l2: 0.0 });
            e.cosine += d.cosine;
            e.l2 += d.l2;
        }
    }
    let n = views.len() as f64;
    Ok(sums.into_iter().map(|(k, d)| (k, FeatureDistances { cosine: d.cosine / n, l2: d.l2 / n })).collect())
}
