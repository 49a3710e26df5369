//! Metric table over whichever inputs the config names: precomputed
//! predictions, renders of a trained scene, a retrieval set and a grounding set.

use std::path::{Path, PathBuf};

use m3_core::feature::{FeatureTensor, PixelMap};
use m3_core::metrics::{
    cosine_l2_maps, grounding_scores, pool_feature_map, psnr, retrieval_at_k, ssim, GroundingSet, Pooling, RetrievalSet,
};
use m3_core::pipeline::render_all;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{create_out_dir, load_scene, load_scene_banks, load_views, split_views, write_jsonl, FeatureSource};
use crate::config::{check_exists, RunConfig};
use crate::error::{config_err, data_err, CliResult};
use crate::imageio::{read_mask, read_rgb};

/// Retrieval pairs: row `i` of the image side matches row `i` of `texts`.
/// The image side is an embedding list, or one feature map per pair pooled
/// to a vector.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RetrievalManifest {
    texts: PathBuf,
    images: Option<PathBuf>,
    #[serde(default)]
    image_features: Vec<PathBuf>,
    pooling: Option<Pooling>,
    #[serde(default = "default_ks")]
    ks: Vec<usize>,
}

fn default_ks() -> Vec<usize> {
    vec![1, 5, 10]
}

/// One feature map scored against a mask per query row.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroundingManifest {
    features: PathBuf,
    #[serde(default)]
    view: usize,
    queries: PathBuf,
    masks: Vec<PathBuf>,
    #[serde(default = "default_thresholds")]
    thresholds: Vec<f64>,
}

fn default_thresholds() -> Vec<f64> {
    vec![0.25, 0.5, 0.75]
}

fn load_manifest<T: for<'de> Deserialize<'de>>(path: &Path, key: &str) -> CliResult<T> {
    check_exists(path, key)?;
    let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut value: toml::Table = toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    // paths inside a manifest are relative to it
    for (k, v) in value.iter_mut() {
        let is_path = matches!(k.as_str(), "texts" | "images" | "features" | "queries");
        let is_paths = matches!(k.as_str(), "image_features" | "masks");
        let join = |v: &mut toml::Value| {
            if let toml::Value::String(s) = v {
                if Path::new(s.as_str()).is_relative() {
                    *s = base.join(s.as_str()).to_string_lossy().into_owned();
                }
            }
        };
        if is_path {
            join(v);
        } else if is_paths {
            if let toml::Value::Array(items) = v {
                items.iter_mut().for_each(join);
            }
        }
    }
    value.try_into().map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// A table row: the section, a label and named values in fixed order.
struct Row {
    section: &'static str,
    label: String,
    values: Vec<(String, f64)>,
}

impl Row {
    fn record(&self) -> Value {
        let mut obj = serde_json::Map::new();
        obj.insert("section".into(), json!(self.section));
        obj.insert("label".into(), json!(self.label));
        for (k, v) in &self.values {
            obj.insert(k.clone(), json!(v));
        }
        Value::Object(obj)
    }
}

struct Plan {
    pred: Vec<(String, PathBuf, GroundTruth)>,
    render: bool,
    retrieval: Option<RetrievalManifest>,
    grounding: Option<GroundingManifest>,
}

enum GroundTruth {
    File(PathBuf),
    Views(FeatureSource),
}

fn plan(cfg: &RunConfig) -> CliResult<Plan> {
    let mut pred = Vec::new();
    for (model, path) in &cfg.pred {
        check_exists(path, &format!("pred.{model}"))?;
        let gt = match cfg.features.get(model) {
            Some(p) => {
                check_exists(p, &format!("features.{model}"))?;
                GroundTruth::File(p.clone())
            }
            None if cfg.cameras.is_some() => GroundTruth::Views(FeatureSource::resolve(cfg, &load_views(cfg)?, model)?),
            None => return Err(config_err(format!("pred.{model} has no ground truth: set features.{model}"))),
        };
        pred.push((model.clone(), path.clone(), gt));
    }
    let render = cfg.scene.is_some();
    if render {
        load_views(cfg)?;
    }
    let retrieval = match &cfg.retrieval {
        Some(p) => {
            let m: RetrievalManifest = load_manifest(p, "retrieval")?;
            check_exists(&m.texts, "retrieval texts")?;
            match (&m.images, m.image_features.is_empty()) {
                (Some(images), true) => check_exists(images, "retrieval images")?,
                (None, false) => {
                    for f in &m.image_features {
                        check_exists(f, "retrieval image_features")?;
                    }
                }
                _ => return Err(config_err("retrieval needs exactly one of 'images' or 'image_features'")),
            }
            if m.ks.is_empty() || m.ks.contains(&0) {
                return Err(config_err("retrieval ks must be positive"));
            }
            Some(m)
        }
        None => None,
    };
    let grounding = match &cfg.grounding {
        Some(p) => {
            let m: GroundingManifest = load_manifest(p, "grounding")?;
            check_exists(&m.features, "grounding features")?;
            check_exists(&m.queries, "grounding queries")?;
            for mask in &m.masks {
                check_exists(mask, "grounding masks")?;
            }
            if m.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
                return Err(config_err("grounding thresholds must lie in [0, 1]"));
            }
            Some(m)
        }
        None => None,
    };
    if pred.is_empty() && !render && retrieval.is_none() && grounding.is_none() {
        return Err(config_err("nothing to evaluate: set pred.<model>, scene, retrieval or grounding"));
    }
    Ok(Plan { pred, render, retrieval, grounding })
}

fn mean(rows: &[f64]) -> f64 {
    rows.iter().sum::<f64>() / rows.len() as f64
}

fn eval_pred(model: &str, pred_path: &Path, gt: &GroundTruth, cfg: &RunConfig) -> CliResult<Row> {
    let pred = FeatureTensor::load(pred_path)?;
    let gt_maps: Vec<PixelMap> = match gt {
        GroundTruth::File(p) => {
            let t = FeatureTensor::load(p)?;
            (0..t.n_views).map(|v| t.view_map(v)).collect()
        }
        GroundTruth::Views(source) => {
            let views = load_views(cfg)?;
            source.load(&views, &(0..views.len()).collect::<Vec<_>>())?
        }
    };
    if pred.n_views != gt_maps.len() {
        return Err(data_err(format!("pred.{model} holds {} views, ground truth {}", pred.n_views, gt_maps.len())));
    }
    let (mut cos, mut l2) = (Vec::new(), Vec::new());
    for (v, gt) in gt_maps.iter().enumerate() {
        let d = cosine_l2_maps(&pred.view_map(v), gt)?;
        cos.push(d.cosine);
        l2.push(d.l2);
    }
    Ok(Row {
        section: "features",
        label: format!("{model} (pred)"),
        values: vec![("cosine".into(), mean(&cos)), ("l2".into(), mean(&l2))],
    })
}

fn eval_render(cfg: &RunConfig) -> CliResult<Vec<Row>> {
    let scene = load_scene(cfg)?;
    let views = load_views(cfg)?;
    let (train, heldout) = split_views(cfg, views.len())?;
    let which = if heldout.is_empty() { train } else { heldout };
    let banks = load_scene_banks(cfg, &scene)?;
    let mut gt = Vec::new();
    for b in &banks {
        match FeatureSource::resolve(cfg, &views, &b.model_name) {
            Ok(source) => gt.push((b.model_name.clone(), source.load(&views, &which)?)),
            Err(crate::error::CliError::Config(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let with_images: Vec<bool> =
        which.iter().map(|&i| views[i].image_path.as_ref().is_some_and(|p| p.exists())).collect();
    let (mut psnrs, mut ssims) = (Vec::new(), Vec::new());
    let mut distances: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); gt.len()];
    for (n, &i) in which.iter().enumerate() {
        let rendered = render_all(&scene, &views[i].camera, &banks, cfg.temperature())?;
        if with_images[n] {
            let image = read_rgb(views[i].image_path.as_ref().expect("checked above"))?;
            psnrs.push(psnr(&rendered.rgb, &image)?);
            ssims.push(ssim(&rendered.rgb, &image)?);
        }
        for ((model, maps), dist) in gt.iter().zip(distances.iter_mut()) {
            let pred = &rendered.features.iter().find(|(m, _)| m == model).expect("one map per bank").1;
            let d = cosine_l2_maps(pred, &maps[n])?;
            dist.0.push(d.cosine);
            dist.1.push(d.l2);
        }
    }
    let mut rows = Vec::new();
    if !psnrs.is_empty() {
        rows.push(Row {
            section: "image",
            label: format!("rgb ({} views)", psnrs.len()),
            values: vec![("psnr".into(), mean(&psnrs)), ("ssim".into(), mean(&ssims))],
        });
    }
    for ((model, _), (cos, l2)) in gt.iter().zip(distances) {
        rows.push(Row {
            section: "features",
            label: format!("{model} (render)"),
            values: vec![("cosine".into(), mean(&cos)), ("l2".into(), mean(&l2))],
        });
    }
    Ok(rows)
}

fn eval_retrieval(m: &RetrievalManifest) -> CliResult<Vec<Row>> {
    let texts = FeatureTensor::load(&m.texts)?;
    let images: Vec<f64> = match &m.images {
        Some(p) => {
            let t = FeatureTensor::load(p)?;
            if t.dim != texts.dim {
                return Err(data_err(format!("image embeddings have {} channels, texts {}", t.dim, texts.dim)));
            }
            to_f64(&t.data)
        }
        None => {
            let pooling = m.pooling.unwrap_or(Pooling::Mean);
            let mut out = Vec::new();
            for p in &m.image_features {
                let t = FeatureTensor::load(p)?;
                if t.n_views != 1 || t.dim != texts.dim {
                    return Err(data_err(format!("{} must hold one view with {} channels", p.display(), texts.dim)));
                }
                out.extend(pool_feature_map(&t.view_map(0), pooling));
            }
            out
        }
    };
    let set = RetrievalSet::new(texts.dim, images, to_f64(&texts.data))?;
    let scores = retrieval_at_k(&set, &m.ks)?;
    Ok(scores
        .ks
        .iter()
        .enumerate()
        .map(|(i, k)| Row {
            section: "retrieval",
            label: format!("R@{k}"),
            values: vec![("i2t".into(), scores.i2t[i]), ("t2i".into(), scores.t2i[i])],
        })
        .collect())
}

fn eval_grounding(m: &GroundingManifest) -> CliResult<Vec<Row>> {
    let features = FeatureTensor::load(&m.features)?;
    if m.view >= features.n_views {
        return Err(config_err(format!(
            "grounding view {} but {} holds {} views",
            m.view,
            m.features.display(),
            features.n_views
        )));
    }
    let map = features.view_map(m.view);
    let queries = FeatureTensor::load(&m.queries)?;
    let mut masks = Vec::with_capacity(m.masks.len());
    for p in &m.masks {
        let (h, w, mask) = read_mask(p)?;
        if (h, w) != (map.height, map.width) {
            return Err(data_err(format!("{} is {h}x{w}, features are {}x{}", p.display(), map.height, map.width)));
        }
        masks.push(mask);
    }
    let set = GroundingSet::new(queries.dim, map.height, map.width, to_f64(&queries.data), masks)?;
    let scores = grounding_scores(&map, &set, &m.thresholds)?;
    let mut values = vec![("miou".into(), scores.miou), ("ciou".into(), scores.ciou)];
    for (t, ap) in scores.thresholds.iter().zip(&scores.ap) {
        values.push((format!("ap@{t}"), *ap));
    }
    Ok(vec![Row { section: "grounding", label: format!("{} queries", set.len()), values }])
}

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let plan = plan(cfg)?;
    let mut rows = Vec::new();
    for (model, path, gt) in &plan.pred {
        rows.push(eval_pred(model, path, gt, cfg)?);
    }
    if plan.render {
        rows.extend(eval_render(cfg)?);
    }
    if let Some(m) = &plan.retrieval {
        rows.extend(eval_retrieval(m)?);
    }
    if let Some(m) = &plan.grounding {
        rows.extend(eval_grounding(m)?);
    }
    if rows.iter().flat_map(|r| &r.values).any(|(_, v)| !v.is_finite()) {
        return Err(crate::error::CliError::Numerical("a metric is not finite".into()));
    }

    for r in &rows {
        let cells: Vec<String> = r.values.iter().map(|(k, v)| format!("{k} {v:.6}")).collect();
        println!("{:<10} {:<24} {}", r.section, r.label, cells.join("  "));
    }
    let out = cfg.out_dir();
    create_out_dir(&out)?;
    write_jsonl(&out.join("eval.jsonl"), &rows.iter().map(Row::record).collect::<Vec<_>>())
}
