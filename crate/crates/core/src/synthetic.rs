//! A small generated scene with known appearance and features: a wall of
//! Gaussians, each assigned one of a few bank rows, seen from jittered
//! cameras. Ground truth is rendered from the generating scene itself.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::feature::{FeatureTensor, PixelMap};
use crate::raster::{render_view, Channels};
use crate::scene::{init_scene_from_points, logit, Camera, GaussianScene, QueryLayout};
use crate::train::{AppearanceView, FeatureView};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub columns: usize,
    pub rows: usize,
    pub width: usize,
    pub height: usize,
    pub train_views: usize,
    pub heldout_views: usize,
    pub dim: usize,
    pub bank_size: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            columns: 5,
            rows: 4,
            width: 64,
            height: 48,
            train_views: 8,
            heldout_views: 2,
            dim: 64,
            bank_size: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticView {
    pub camera: Camera,
    pub image: PixelMap,
    /// Index into the bank rows per pixel.
    pub labels: Vec<usize>,
    pub features: PixelMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    /// Generating scene with its true colors and opacities.
    pub truth: GaussianScene,
    /// Same geometry, gray and mostly transparent: the appearance starting point.
    pub initial: GaussianScene,
    /// Bank row assigned to each primitive.
    pub primitive_labels: Vec<usize>,
    /// `bank_size x dim` unit rows.
    pub bank_rows: Vec<f32>,
    pub dim: usize,
    pub train: Vec<SyntheticView>,
    pub heldout: Vec<SyntheticView>,
}

const TRUE_OPACITY: f64 = 0.95;
/// Primitive scale relative to the nearest-neighbor initialization.
const SCALE_FACTOR: f32 = 0.5;
const CAMERA_DISTANCE: f64 = 5.0;

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (cols, rows) = (config.columns, config.rows);
    let points: Vec<([f32; 3], [f32; 3])> = (0..cols * rows)
        .map(|i| {
            let x = (i % cols) as f32 - (cols as f32 - 1.0) / 2.0;
            let y = (i / cols) as f32 - (rows as f32 - 1.0) / 2.0;
            let z = rng.random_range(-0.05..0.05);
            ([x, y, z], std::array::from_fn(|_| rng.random_range(0.1..0.9)))
        })
        .collect();
    let mut truth = init_scene_from_points(&points, QueryLayout::empty())?;
    for p in truth.primitives.iter_mut() {
        p.log_scale = p.log_scale.map(|s| s + SCALE_FACTOR.ln());
        p.opacity_logit = logit(TRUE_OPACITY) as f32;
    }
    let mut initial = truth.clone();
    for p in initial.primitives.iter_mut() {
        p.color_sh = [0.5; 3];
        p.opacity_logit = logit(0.1) as f32;
    }

    let t = config.bank_size;
    let mut primitive_labels: Vec<usize> = (0..truth.len()).map(|i| i % t).collect();
    primitive_labels.shuffle(&mut rng);
    let mut bank_rows = Vec::with_capacity(t * config.dim);
    for _ in 0..t {
        let row: Vec<f64> = (0..config.dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        bank_rows.extend(row.iter().map(|v| (v / norm) as f32));
    }

    let mut label_scene = truth.clone();
    label_scene.layout = QueryLayout::from_degrees([("label", t)])?;
    for (p, &l) in label_scene.primitives.iter_mut().zip(&primitive_labels) {
        p.query = (0..t).map(|k| if k == l { 1.0 } else { 0.0 }).collect();
    }

    // wide enough to see about 3.6 units of wall at the nominal distance
    let focal = config.width as f64 / 2.0 * CAMERA_DISTANCE / 1.8;
    let mut views = Vec::with_capacity(config.train_views + config.heldout_views);
    for _ in 0..config.train_views + config.heldout_views {
        let eye =
            [rng.random_range(-0.5..0.5), rng.random_range(-0.4..0.4), -CAMERA_DISTANCE + rng.random_range(-0.3..0.3)];
        let target = [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), 0.0];
        let camera = Camera::look_at(eye, target, [0.0, -1.0, 0.0], focal, focal, config.width, config.height)?;
        let image = render_view(&truth, &camera, &Channels::rgb())?.rgb.expect("rgb rendered");
        let weights = render_view(&label_scene, &camera, &Channels::query(0..t))?.query_map.expect("labels rendered");
        let labels: Vec<usize> = (0..weights.pixel_count())
            .map(|p| {
                let w = weights.pixel(p);
                (1..t).fold(0, |best, k| if w[k] > w[best] { k } else { best })
            })
            .collect();
        let features = PixelMap::from_data(
            config.height,
            config.width,
            config.dim,
            labels
                .iter()
                .flat_map(|&l| bank_rows[l * config.dim..(l + 1) * config.dim].iter().map(|&v| v as f64))
                .collect(),
        )?;
        views.push(SyntheticView { camera, image, labels, features });
    }
    let heldout = views.split_off(config.train_views);
    Ok(SyntheticScene { truth, initial, primitive_labels, bank_rows, dim: config.dim, train: views, heldout })
}

impl SyntheticScene {
    pub fn appearance_views(views: &[SyntheticView]) -> Vec<AppearanceView> {
        views.iter().map(|v| AppearanceView { camera: v.camera.clone(), image: v.image.clone() }).collect()
    }

    pub fn feature_views(views: &[SyntheticView], model: &str) -> Vec<FeatureView> {
        views
            .iter()
            .map(|v| FeatureView {
                camera: v.camera.clone(),
                features: BTreeMap::from([(model.to_string(), v.features.clone())]),
            })
            .collect()
    }

    /// Training-view features flattened into one tensor.
    pub fn train_features(&self, model: &str) -> Result<FeatureTensor> {
        let maps: Vec<PixelMap> = self.train.iter().map(|v| v.features.clone()).collect();
        FeatureTensor::from_maps(model, &maps)
    }
}
