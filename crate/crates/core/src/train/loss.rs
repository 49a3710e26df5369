use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Error, Result};
use crate::feature::PixelMap;
use crate::metrics::ssim_with_grad;

/// Guard on the norm product in the cosine term.
pub const COSINE_EPS: f64 = 1e-8;
pub const L1_WEIGHT: f64 = 0.8;
pub const SSIM_WEIGHT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub cos: f64,
    pub l2: f64,
}

/// `count` pixel indices in `0..pixels`: distinct when `count <= pixels`,
/// drawn with replacement otherwise.
pub fn sample_pixels(rng: &mut impl Rng, pixels: usize, count: usize) -> Vec<usize> {
    if count <= pixels {
        index::sample(rng, pixels, count).into_vec()
    } else {
        (0..count).map(|_| rng.random_range(0..pixels)).collect()
    }
}

/// Mean over rows of `cos * (1 - cos(p, g)) + l2 * |p - g|^2 / d`, with the
/// gradient with respect to every `pred` row written to `grad`.
pub fn paired_rows_loss(pred: &[f64], gt: &[f64], dim: usize, weights: LossWeights, grad: &mut [f64]) -> f64 {
    let rows = pred.len() / dim;
    let inv_rows = 1.0 / rows as f64;
    let mut total = 0.0;
    for ((p, g), dp) in pred.chunks(dim).zip(gt.chunks(dim)).zip(grad.chunks_mut(dim)) {
        let (mut pg, mut pp, mut gg, mut sq) = (0.0, 0.0, 0.0, 0.0);
        for (a, b) in p.iter().zip(g) {
            pg += a * b;
            pp += a * a;
            gg += b * b;
            sq += (a - b) * (a - b);
        }
        let raw_norm = (pp * gg).sqrt();
        let norm = raw_norm.max(COSINE_EPS);
        let cos = pg / norm;
        total += weights.cos * (1.0 - cos) + weights.l2 * sq / dim as f64;
        let guarded = raw_norm < COSINE_EPS;
        for ((d, a), b) in dp.iter_mut().zip(p).zip(g) {
            let dcos = if guarded || pp == 0.0 { b / norm } else { b / norm - cos * a / pp };
            *d = inv_rows * (-weights.cos * dcos + weights.l2 * 2.0 * (a - b) / dim as f64);
        }
    }
    total * inv_rows
}

/// Point-sampled feature loss of a full map. `points` locations are drawn
/// from `seed` and used for both maps; the gradient is zero off-sample.
pub fn point_feature_loss(
    pred: &PixelMap,
    gt: &PixelMap,
    points: usize,
    seed: u64,
    weights: LossWeights,
) -> Result<(f64, PixelMap)> {
    if (pred.height, pred.width, pred.channels) != (gt.height, gt.width, gt.channels) {
        return Err(dim_err("prediction and ground truth shapes differ"));
    }
    if points == 0 || pred.pixel_count() == 0 {
        return Err(Error::Parameter("need at least one point and one pixel".into()));
    }
    let d = pred.channels;
    let idx = sample_pixels(&mut ChaCha8Rng::seed_from_u64(seed), pred.pixel_count(), points);
    let p: Vec<f64> = idx.iter().flat_map(|&i| pred.pixel(i).iter().copied()).collect();
    let g: Vec<f64> = idx.iter().flat_map(|&i| gt.pixel(i).iter().copied()).collect();
    let mut rows_grad = vec![0.0; p.len()];
    let loss = paired_rows_loss(&p, &g, d, weights, &mut rows_grad);
    let mut grad = PixelMap::zeros(pred.height, pred.width, d);
    for (r, &i) in idx.iter().enumerate() {
        for (a, b) in grad.pixel_mut(i).iter_mut().zip(&rows_grad[r * d..(r + 1) * d]) {
            *a += b;
        }
    }
    Ok((loss, grad))
}

/// `0.8 * L1 + 0.2 * (1 - SSIM)` and its gradient with respect to `pred`.
pub fn image_loss(pred: &PixelMap, gt: &PixelMap) -> Result<(f64, PixelMap)> {
    let (s, ds) = ssim_with_grad(pred, gt)?;
    let n = pred.data.len() as f64;
    let mut l1 = 0.0;
    let mut grad = ds;
    for ((g, a), b) in grad.data.iter_mut().zip(&pred.data).zip(&gt.data) {
        let diff = a - b;
        l1 += diff.abs();
        // subgradient 0 at equality
        let sign = if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        };
        *g = L1_WEIGHT * sign / n - SSIM_WEIGHT * *g;
    }
    Ok((L1_WEIGHT * l1 / n + SSIM_WEIGHT * (1.0 - s), grad))
}
