use m3_core::feature::FeatureTensor;
use m3_core::metrics::cosine;
use m3_core::pipeline::render_all;
use serde::Serialize;

use super::{create_out_dir, load_scene, load_scene_banks, load_views, view_name};
use crate::config::{check_exists, RunConfig};
use crate::error::{config_err, data_err, CliResult};
use crate::imageio::{red_overlay, write_rgb};

#[derive(Debug, Serialize)]
struct QueryResult<'a> {
    view: usize,
    model: &'a str,
    query_row: usize,
    x: usize,
    y: usize,
    similarity: f64,
    min_similarity: f64,
    max_similarity: f64,
}

/// Min-max normalizes to `[0, 1]`; a constant input maps to zeros.
pub(crate) fn normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; values.len()]
    }
}

/// First index of the maximum.
pub(crate) fn argmax(values: &[f64]) -> usize {
    (1..values.len()).fold(0, |best, i| if values[i] > values[best] { i } else { best })
}

/// Scores every pixel of the rendered feature map against one query
/// embedding, writes a red heatmap over the rendered RGB and reports the
/// best pixel.
pub fn run(cfg: &RunConfig, view: usize) -> CliResult<()> {
    let scene = load_scene(cfg)?;
    let views = load_views(cfg)?;
    if view >= views.len() {
        return Err(config_err(format!("view {view} but the manifest has {} views", views.len())));
    }
    let query_path = cfg.require(&cfg.query, "query")?;
    check_exists(query_path, "query")?;
    let banks = load_scene_banks(cfg, &scene)?;
    let model = match &cfg.model {
        Some(m) => m.clone(),
        None if banks.len() == 1 => banks[0].model_name.clone(),
        None if banks.is_empty() => return Err(config_err("the scene has no feature memory; train it first")),
        None => return Err(config_err("several models in the scene; set 'model'")),
    };
    let bank = banks
        .iter()
        .position(|b| b.model_name == model)
        .ok_or_else(|| config_err(format!("the scene has no model '{model}'")))?;
    let queries = FeatureTensor::load(query_path)?;
    let row = cfg.query_row.unwrap_or(0);
    if row >= queries.rows() {
        return Err(config_err(format!("query_row {row} but {} holds {} rows", query_path.display(), queries.rows())));
    }
    if queries.dim != banks[bank].dim {
        return Err(data_err(format!("query has {} channels, model '{model}' has {}", queries.dim, banks[bank].dim)));
    }
    let q: Vec<f64> = queries.row(row).iter().map(|&v| v as f64).collect();

    let rendered = render_all(&scene, &views[view].camera, &banks[bank..=bank], cfg.temperature())?;
    let features = &rendered.features[0].1;
    let sims: Vec<f64> = (0..features.pixel_count()).map(|p| cosine(features.pixel(p), &q)).collect();
    if sims.iter().any(|s| !s.is_finite()) {
        return Err(crate::error::CliError::Numerical("similarity map is not finite".into()));
    }
    let best = argmax(&sims);
    let result = QueryResult {
        view,
        model: &model,
        query_row: row,
        x: best % features.width,
        y: best / features.width,
        similarity: sims[best],
        min_similarity: sims.iter().copied().fold(f64::INFINITY, f64::min),
        max_similarity: sims[best],
    };

    let out = cfg.out_dir();
    create_out_dir(&out)?;
    let name = view_name(view).replace("view", "query");
    write_rgb(&out.join(format!("{name}.png")), &red_overlay(&rendered.rgb, &normalize(&sims)))?;
    std::fs::write(
        out.join(format!("{name}.json")),
        serde_json::to_string_pretty(&result).expect("result serializes") + "\n",
    )?;
    println!("argmax pixel ({}, {}) similarity {:.6}", result.x, result.y, result.similarity);
    Ok(())
}
