use std::collections::BTreeMap;

use m3_core::bank::{reduce_similarity, MemoryBank};
use m3_core::feature::{FeatureTensor, PixelMap};
use m3_core::scene::QueryLayout;
use m3_core::train::{fit_memory, FeatureView};

use super::{create_out_dir, feature_models, load_scene, load_views, split_views, FeatureSource};
use crate::config::RunConfig;
use crate::error::{config_err, data_err, CliResult};

/// Fits queries and projections on a scene whose appearance is already fitted.
/// Queries always restart from zero. Models without a configured `bank.<model>`
/// get a bank reduced from their training features, exactly as `reduce` would.
pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let train_cfg = cfg.train_config()?;
    let mut scene = load_scene(cfg)?;
    let views = load_views(cfg)?;
    let (train_idx, heldout_idx) = split_views(cfg, views.len())?;
    let models: Vec<String> = match &cfg.model {
        Some(m) => vec![m.clone()],
        None => feature_models(cfg, &views).into_iter().collect(),
    };
    if models.is_empty() {
        return Err(config_err("no feature models configured"));
    }
    let sources = models.iter().map(|m| FeatureSource::resolve(cfg, &views, m)).collect::<CliResult<Vec<_>>>()?;
    for m in &models {
        if let Some(p) = cfg.bank.get(m) {
            crate::config::check_exists(p, &format!("bank.{m}"))?;
        }
    }
    let theta = cfg.theta();
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(config_err(format!("theta must be in (0, 1], got {theta}")));
    }

    let mut train_maps: BTreeMap<&str, Vec<PixelMap>> = BTreeMap::new();
    let mut heldout_maps: BTreeMap<&str, Vec<PixelMap>> = BTreeMap::new();
    let mut banks = Vec::with_capacity(models.len());
    for (m, source) in models.iter().zip(&sources) {
        let maps = source.load(&views, &train_idx)?;
        let bank = if let Some(path) = cfg.bank.get(m) {
            let bank = MemoryBank::load(path)?;
            if bank.model_name != *m {
                return Err(data_err(format!(
                    "{} holds a bank for '{}', expected '{m}'",
                    path.display(),
                    bank.model_name
                )));
            }
            bank
        } else {
            let raw = FeatureTensor::from_maps(m.as_str(), &maps)?;
            reduce_similarity(&raw, theta, cfg.chunk())?.init_projection(cfg.degree(m), cfg.seed())?
        };
        banks.push(bank);
        heldout_maps.insert(m, source.load(&views, &heldout_idx)?);
        train_maps.insert(m, maps);
    }

    let layout = QueryLayout::from_degrees(banks.iter().map(|b| (b.model_name.clone(), b.degree)))?;
    scene.reset_queries(layout);
    let feature_views = |idx: &[usize], maps: &mut BTreeMap<&str, Vec<PixelMap>>| -> Vec<FeatureView> {
        let mut per_model: Vec<(&str, std::vec::IntoIter<PixelMap>)> =
            maps.iter_mut().map(|(k, v)| (*k, std::mem::take(v).into_iter())).collect();
        idx.iter()
            .map(|&i| FeatureView {
                camera: views[i].camera.clone(),
                features: per_model
                    .iter_mut()
                    .map(|(k, it)| (k.to_string(), it.next().expect("one map per view")))
                    .collect(),
            })
            .collect()
    };
    let train = feature_views(&train_idx, &mut train_maps);
    let heldout = feature_views(&heldout_idx, &mut heldout_maps);

    let report = fit_memory(&mut scene, &train, &heldout, &mut banks, &train_cfg)?;
    let out = cfg.out_dir();
    create_out_dir(&out)?;
    scene.save(out.join("scene.m3gs"))?;
    for bank in &banks {
        bank.save(out.join(format!("bank_{}.m3pb", bank.model_name)))?;
    }
    report.save(out.join("report.jsonl"))?;
    for bank in &banks {
        let last = report.records.last().and_then(|r| r.models.get(&bank.model_name));
        print!("{}: t = {}, degree {}", bank.model_name, bank.len(), bank.degree);
        if let Some(l) = last {
            print!(", final loss {l:.6}");
        }
        if let Some(d) = report.heldout.get(&bank.model_name) {
            print!(", held-out cosine {:.4}, l2 {:.6}", d.cosine, d.l2);
        }
        println!();
    }
    Ok(())
}
