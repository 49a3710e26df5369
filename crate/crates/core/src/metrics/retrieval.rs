use serde::{Deserialize, Serialize};

use super::cosine;
use crate::error::{dim_err, Error, Result};
use crate::feature::PixelMap;

/// Paired image and text embeddings; row `i` of each forms the positive pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalSet {
    pub dim: usize,
    pub images: Vec<f64>,
    pub texts: Vec<f64>,
}

impl RetrievalSet {
    pub fn new(dim: usize, images: Vec<f64>, texts: Vec<f64>) -> Result<Self> {
        if dim == 0 || !images.len().is_multiple_of(dim) || images.len() != texts.len() {
            return Err(dim_err(format!(
                "retrieval set needs equal m x {dim} image and text matrices, got {} and {} values",
                images.len(),
                texts.len()
            )));
        }
        let set = Self { dim, images, texts };
        if set.len() < 2 {
            return Err(Error::Parameter("retrieval set needs at least two pairs".into()));
        }
        if !set.images.iter().chain(&set.texts).all(|v| v.is_finite()) {
            return Err(Error::Parameter("retrieval embeddings hold non-finite values".into()));
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.images.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    fn image(&self, i: usize) -> &[f64] {
        &self.images[i * self.dim..(i + 1) * self.dim]
    }

    fn text(&self, i: usize) -> &[f64] {
        &self.texts[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalScores {
    pub ks: Vec<usize>,
    /// Percentage of images whose paired text ranks within the top k.
    pub i2t: Vec<f64>,
    pub t2i: Vec<f64>,
}

/// Zero-based rank of candidate `i` in `sims`: strictly better candidates, plus
/// equally scored ones with a lower index.
fn rank_of(sims: &[f64], i: usize) -> usize {
    let s = sims[i];
    sims.iter().enumerate().filter(|&(j, &v)| v > s || (v == s && j < i)).count()
}

pub fn retrieval_at_k(set: &RetrievalSet, ks: &[usize]) -> Result<RetrievalScores> {
    let m = set.len();
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > m) {
        return Err(Error::Parameter(format!("k = {k} outside 1..={m}")));
    }
    let sim: Vec<f64> = (0..m * m).map(|ij| cosine(set.image(ij / m), set.text(ij % m))).collect();
    let mut i2t_rank = Vec::with_capacity(m);
    let mut t2i_rank = Vec::with_capacity(m);
    for i in 0..m {
        i2t_rank.push(rank_of(&sim[i * m..(i + 1) * m], i));
        let column: Vec<f64> = (0..m).map(|j| sim[j * m + i]).collect();
        t2i_rank.push(rank_of(&column, i));
    }
    let pct = |ranks: &[usize], k: usize| 100.0 * ranks.iter().filter(|&&r| r < k).count() as f64 / m as f64;
    Ok(RetrievalScores {
        ks: ks.to_vec(),
        i2t: ks.iter().map(|&k| pct(&i2t_rank, k)).collect(),
        t2i: ks.iter().map(|&k| pct(&t2i_rank, k)).collect(),
    })
}

/// How a rendered feature map becomes one image embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
    /// Mean over the central half of each axis.
    CenterCrop,
}

pub fn pool_feature_map(map: &PixelMap, pooling: Pooling) -> Vec<f64> {
    let (ys, xs) = match pooling {
        Pooling::Mean => (0..map.height, 0..map.width),
        Pooling::CenterCrop => {
            let crop = |n: usize| {
                let len = (n / 2).max(1);
                let start = (n - len) / 2;
                start..start + len
            };
            (crop(map.height), crop(map.width))
        }
    };
    let mut out = vec![0.0; map.channels];
    let count = (ys.len() * xs.len()) as f64;
    for y in ys {
        for x in xs.clone() {
            for (o, v) in out.iter_mut().zip(map.pixel(y * map.width + x)) {
                *o += v;
            }
        }
    }
    out.iter_mut().for_each(|v| *v /= count);
    out
}
