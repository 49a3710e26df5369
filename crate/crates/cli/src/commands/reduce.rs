use m3_core::bank::reduce_similarity;
use m3_core::feature::FeatureTensor;

use super::{bank_path, create_out_dir, feature_models, load_views, split_views, FeatureSource};
use crate::config::{check_exists, RunConfig};
use crate::error::{config_err, CliResult};

/// Raw features to reduce for `model`: the configured tensor as is, or the
/// training views of the camera manifest.
pub(crate) fn training_features(cfg: &RunConfig, model: &str) -> CliResult<FeatureTensor> {
    if cfg.cameras.is_none() {
        let path = cfg
            .features
            .get(model)
            .ok_or_else(|| config_err(format!("missing required setting 'features.{model}'")))?;
        check_exists(path, &format!("features.{model}"))?;
        return Ok(FeatureTensor::load(path)?);
    }
    let views = load_views(cfg)?;
    let (train, _) = split_views(cfg, views.len())?;
    let source = FeatureSource::resolve(cfg, &views, model)?;
    let maps = source.load(&views, &train)?;
    Ok(FeatureTensor::from_maps(model, &maps)?)
}

fn models(cfg: &RunConfig) -> CliResult<Vec<String>> {
    if let Some(m) = &cfg.model {
        return Ok(vec![m.clone()]);
    }
    let models: Vec<String> = match cfg.cameras {
        Some(_) => feature_models(cfg, &load_views(cfg)?).into_iter().collect(),
        None => cfg.features.keys().cloned().collect(),
    };
    if models.is_empty() {
        return Err(config_err("no feature models configured"));
    }
    Ok(models)
}

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let (theta, chunk) = (cfg.theta(), cfg.chunk());
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(config_err(format!("theta must be in (0, 1], got {theta}")));
    }
    if chunk == 0 {
        return Err(config_err("chunk must be positive"));
    }
    let models = models(cfg)?;
    let mut inputs = Vec::with_capacity(models.len());
    for model in &models {
        inputs.push(training_features(cfg, model)?);
    }
    create_out_dir(&cfg.out_dir())?;
    for (model, raw) in models.iter().zip(inputs) {
        let rows = raw.rows();
        let mut bank = reduce_similarity(&raw, theta, chunk)?.init_projection(cfg.degree(model), cfg.seed())?;
        bank.model_name = model.clone();
        let path = bank_path(cfg, model);
        if let Some(parent) = path.parent() {
            create_out_dir(parent)?;
        }
        bank.save(&path)?;
        println!(
            "{model}: t = {} of {rows} rows, compression ratio {:.2}, bank -> {}",
            bank.len(),
            rows as f64 / bank.len() as f64,
            path.display()
        );
    }
    Ok(())
}
