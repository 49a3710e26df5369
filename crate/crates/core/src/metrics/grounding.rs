use serde::Serialize;

use super::cosine;
use crate::error::{dim_err, Error, Result};
use crate::feature::PixelMap;

/// Query embeddings with one ground-truth mask each.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingSet {
    pub dim: usize,
    pub height: usize,
    pub width: usize,
    /// `k x dim`.
    pub queries: Vec<f64>,
    /// `k` masks of `height * width`, row-major.
    pub masks: Vec<Vec<bool>>,
}

impl GroundingSet {
    pub fn new(dim: usize, height: usize, width: usize, queries: Vec<f64>, masks: Vec<Vec<bool>>) -> Result<Self> {
        if masks.is_empty() {
            return Err(Error::Parameter("grounding set is empty".into()));
        }
        if dim == 0 || queries.len() != masks.len() * dim {
            return Err(dim_err(format!(
                "{} masks need {} query values, got {}",
                masks.len(),
                masks.len() * dim,
                queries.len()
            )));
        }
        if !queries.iter().all(|v| v.is_finite()) {
            return Err(Error::Parameter("grounding queries hold non-finite values".into()));
        }
        for (k, m) in masks.iter().enumerate() {
            if m.len() != height * width {
                return Err(dim_err(format!("mask {k} has {} pixels, expected {height}x{width}", m.len())));
            }
            if !m.iter().any(|&v| v) {
                return Err(Error::Parameter(format!("mask {k} has no positive pixel")));
            }
        }
        Ok(Self { dim, height, width, queries, masks })
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn query(&self, k: usize) -> &[f64] {
        &self.queries[k * self.dim..(k + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundingScores {
    pub per_query_iou: Vec<f64>,
    pub miou: f64,
    pub ciou: f64,
    pub thresholds: Vec<f64>,
    /// Fraction of queries whose IoU reaches each threshold.
    pub ap: Vec<f64>,
}

/// `(intersection, union)` pixel counts.
pub fn mask_iou(pred: &[bool], gt: &[bool]) -> (usize, usize) {
    pred.iter().zip(gt).fold((0, 0), |(i, u), (&p, &g)| (i + (p && g) as usize, u + (p || g) as usize))
}

/// Fraction of IoUs at or above each threshold.
pub fn average_precision(ious: &[f64], thresholds: &[f64]) -> Vec<f64> {
    thresholds.iter().map(|&t| ious.iter().filter(|&&iou| iou >= t).count() as f64 / ious.len() as f64).collect()
}

/// Labels every pixel with its most similar query (ties to the lower index)
/// and scores each query's predicted region against its mask.
pub fn grounding_scores(rendered: &PixelMap, set: &GroundingSet, thresholds: &[f64]) -> Result<GroundingScores> {
    if (rendered.height, rendered.width, rendered.channels) != (set.height, set.width, set.dim) {
        return Err(dim_err(format!(
            "rendered map is {}x{}x{}, grounding set expects {}x{}x{}",
            rendered.height, rendered.width, rendered.channels, set.height, set.width, set.dim
        )));
    }
    let k = set.len();
    let labels: Vec<usize> = (0..rendered.pixel_count())
        .map(|p| {
            let f = rendered.pixel(p);
            let mut best = (0, f64::NEG_INFINITY);
            for q in 0..k {
                let s = cosine(f, set.query(q));
                if s > best.1 {
                    best = (q, s);
                }
            }
            best.0
        })
        .collect();
    let (mut inter, mut union) = (0usize, 0usize);
    let per_query_iou: Vec<f64> = (0..k)
        .map(|q| {
            let pred: Vec<bool> = labels.iter().map(|&l| l == q).collect();
            let (i, u) = mask_iou(&pred, &set.masks[q]);
            inter += i;
            union += u;
            i as f64 / u as f64
        })
        .collect();
    let miou = per_query_iou.iter().sum::<f64>() / k as f64;
    let ap = average_precision(&per_query_iou, thresholds);
    Ok(GroundingScores { per_query_iou, miou, ciou: inter as f64 / union as f64, thresholds: thresholds.to_vec(), ap })
}
