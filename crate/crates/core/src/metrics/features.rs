use serde::Serialize;

use super::cosine;
use crate::error::{dim_err, Result};
use crate::feature::PixelMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeatureDistances {
    /// Mean over pixels of `1 - cos`.
    pub cosine: f64,
    /// Mean over pixels of the squared Euclidean distance.
    pub l2: f64,
}

pub fn cosine_l2_maps(pred: &PixelMap, gt: &PixelMap) -> Result<FeatureDistances> {
    if (pred.height, pred.width, pred.channels) != (gt.height, gt.width, gt.channels) {
        return Err(dim_err(format!(
            "prediction is {}x{}x{}, ground truth {}x{}x{}",
            pred.height, pred.width, pred.channels, gt.height, gt.width, gt.channels
        )));
    }
    let n = pred.pixel_count();
    if n == 0 {
        return Err(dim_err("empty feature map"));
    }
    let (mut cos, mut l2) = (0.0, 0.0);
    for p in 0..n {
        let (a, b) = (pred.pixel(p), gt.pixel(p));
        cos += 1.0 - cosine(a, b);
        l2 += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    }
    Ok(FeatureDistances { cosine: cos / n as f64, l2: l2 / n as f64 })
}
