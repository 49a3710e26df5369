//! Three-component PCA false-color rendering of feature maps.

use m3_core::feature::PixelMap;
use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{config_err, CliResult};

/// Components whose variance is at most this fraction of the leading one
/// are treated as absent and drawn as mid-gray.
const DEGENERATE_RATIO: f64 = 1e-10;

/// Projects every pixel onto the top three principal directions and min-max
/// scales each to `[0, 1]`. Each direction's sign makes its entries sum
/// positive, so the image does not depend on the eigensolver's sign choice.
pub fn pca_visualize(map: &PixelMap) -> CliResult<PixelMap> {
    let d = map.channels;
    if d < 3 {
        return Err(config_err(format!("PCA visualization needs at least 3 channels, got {d}")));
    }
    let n = map.pixel_count();
    let mut mean = vec![0.0; d];
    for p in 0..n {
        for (m, v) in mean.iter_mut().zip(map.pixel(p)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for p in 0..n {
        let x: Vec<f64> = map.pixel(p).iter().zip(&mean).map(|(v, m)| v - m).collect();
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] += x[i] * x[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let lead = eig.eigenvalues[order[0]].max(0.0);

    let mut out = PixelMap::zeros(map.height, map.width, 3);
    for (c, &k) in order.iter().take(3).enumerate() {
        let lambda = eig.eigenvalues[k];
        if lead <= 0.0 || lambda <= DEGENERATE_RATIO * lead {
            (0..n).for_each(|p| out.data[p * 3 + c] = 0.5);
            continue;
        }
        let mut axis: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let sum: f64 = axis.iter().sum();
        let flip = if sum != 0.0 { sum < 0.0 } else { axis.iter().find(|v| **v != 0.0).is_some_and(|v| *v < 0.0) };
        if flip {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        let proj: Vec<f64> =
            (0..n).map(|p| map.pixel(p).iter().zip(&mean).zip(&axis).map(|((v, m), a)| (v - m) * a).sum()).collect();
        let lo = proj.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (p, v) in proj.iter().enumerate() {
            out.data[p * 3 + c] = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
        }
    }
    Ok(out)
}
