//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the code path it checks beyond
//! reading inputs.
#![allow(dead_code)]

use m3_core::raster::SplatFragment;
use m3_core::scene::{Camera, GaussianPrimitive, GaussianScene, QueryLayout};
use rand::{Rng, RngCore};

pub const IDENTITY_POSE: [[f64; 4]; 4] =
    [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];

pub fn small_camera(width: usize, height: usize) -> Camera {
    let f = width.max(height) as f64;
    Camera::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height, IDENTITY_POSE).unwrap()
}

/// `n` Gaussians in front of `small_camera`, with opacities away from the clamp.
pub fn random_scene(rng: &mut impl RngCore, n: usize, l: usize) -> GaussianScene {
    let layout = if l == 0 { QueryLayout::empty() } else { QueryLayout::from_degrees([("m", l)]).unwrap() };
    let primitives = (0..n)
        .map(|_| {
            let z: f32 = rng.random_range(2.0..4.0);
            let mut rot: [f32; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            rot[0] += 1.5;
            GaussianPrimitive {
                centroid: [rng.random_range(-0.35..0.35) * z, rng.random_range(-0.35..0.35) * z, z],
                rotation: rot,
                log_scale: std::array::from_fn(|_| rng.random_range(0.15f32..0.6).ln()),
                opacity_logit: rng.random_range(-1.4..2.0),
                color_sh: std::array::from_fn(|_| rng.random_range(0.0..1.0)),
                query: (0..l).map(|_| rng.random_range(-1.0..1.0)).collect(),
            }
        })
        .collect();
    let mut scene = GaussianScene::new(primitives, layout).unwrap();
    scene.normalize_rotations();
    scene
}

/// Gaussian falloff evaluated from the covariance by explicit 2x2 inversion.
fn oracle_alpha(f: &SplatFragment, x: usize, y: usize) -> f64 {
    let [a, b, c] = f.cov;
    let det = a * c - b * b;
    let (ia, ib, ic) = (c / det, -b / det, a / det);
    let dx = x as f64 + 0.5 - f.mean[0];
    let dy = y as f64 + 0.5 - f.mean[1];
    let m = ia * dx * dx + 2.0 * ib * dx * dy + ic * dy * dy;
    f.opacity * (-0.5 * m.max(0.0)).exp()
}

/// Per-pixel front-to-back compositing over an unsorted fragment list: sort by
/// depth for this pixel, recompute every transmittance as an explicit product.
/// Payload of a fragment comes from `payload(primitive_index)`.
pub fn naive_render(
    fragments: &[SplatFragment],
    width: usize,
    height: usize,
    channels: usize,
    payload: impl Fn(usize) -> Vec<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; width * height * channels];
    let mut alpha_out = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let mut layers: Vec<(f64, usize, f64)> = fragments
                .iter()
                .filter_map(|f| {
                    let a = oracle_alpha(f, x, y);
                    (a >= 1.0 / 255.0).then(|| (f.depth, f.index, a.min(0.99)))
                })
                .collect();
            layers.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap().then(p.1.cmp(&q.1)));
            let pix = y * width + x;
            let mut composited = Vec::new();
            for (i, &(_, idx, a)) in layers.iter().enumerate() {
                let t: f64 = layers[..i].iter().map(|l| 1.0 - l.2).product();
                if t < 1e-4 {
                    break;
                }
                let p = payload(idx);
                for k in 0..channels {
                    out[pix * channels + k] += p[k] * a * t;
                }
                composited.push(a);
            }
            let t_final: f64 = composited.iter().map(|a| 1.0 - a).product();
            alpha_out[pix] = 1.0 - t_final;
        }
    }
    (out, alpha_out)
}

/// Central difference of `f` around an f32 parameter, dividing by the step
/// actually representable in f32.
pub fn central_difference(param: &mut f32, h: f32, mut f: impl FnMut(&mut f32) -> f64) -> f64 {
    let orig = *param;
    let plus = orig + h;
    let minus = orig - h;
    *param = plus;
    let fp = f(param);
    *param = minus;
    let fm = f(param);
    *param = orig;
    (fp - fm) / (plus as f64 - minus as f64)
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

pub fn random_unit_rows(rng: &mut impl RngCore, n: usize, d: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(n * d);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        out.extend(row.iter().map(|v| (v / norm) as f32));
    }
    out
}

/// Row-at-a-time redundancy reduction over explicitly normalized rows: a row
/// is kept when no row similar to it has been claimed yet, and then claims
/// all of them.
pub fn sequential_reduce(rows: &[f32], d: usize, theta: f64) -> Vec<u32> {
    let n = rows.len() / d;
    let unit: Vec<Vec<f64>> = rows
        .chunks(d)
        .map(|r| {
            let norm = r.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            r.iter().map(|&v| v as f64 / norm).collect()
        })
        .collect();
    let mut used = vec![false; n];
    let mut kept = Vec::new();
    for j in 0..n {
        if used[j] {
            continue;
        }
        let group: Vec<usize> =
            (0..n).filter(|&i| unit[j].iter().zip(&unit[i]).map(|(a, b)| a * b).sum::<f64>() >= theta).collect();
        if group.iter().all(|&i| !used[i]) {
            kept.push(j as u32);
            for i in group {
                used[i] = true;
            }
        }
    }
    kept
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Memory attention for a single query written as plain index loops.
/// `w_m` is `s x d`, `psc` is `t x d`. Returns (feature, weights).
pub fn scalar_attention(q: &[f64], w_m: &[f32], psc: &[f32], d: usize, scale: f64) -> (Vec<f64>, Vec<f64>) {
    let s = q.len();
    let t = psc.len() / d;
    let mut logits = vec![0.0; t];
    for k in 0..t {
        for i in 0..s {
            for e in 0..d {
                logits[k] += q[i] * w_m[i * d + e] as f64 * psc[k * d + e] as f64;
            }
        }
        logits[k] *= scale;
    }
    let denom: f64 = logits.iter().map(|z| z.exp()).sum();
    let weights: Vec<f64> = logits.iter().map(|z| z.exp() / denom).collect();
    let mut out = vec![0.0; d];
    for k in 0..t {
        for e in 0..d {
            out[e] += weights[k] * psc[k * d + e] as f64;
        }
    }
    (out, weights)
}

fn cos64(a: &[f64], b: &[f64]) -> f64 {
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let aa: f64 = a.iter().map(|x| x * x).sum();
    let bb: f64 = b.iter().map(|x| x * x).sum();
    ab / (aa * bb).sqrt().max(1e-8)
}

/// Recall@k in percent by fully sorting every candidate list (stable sort on
/// descending similarity, so equal scores keep index order).
pub fn brute_force_retrieval(images: &[f64], texts: &[f64], d: usize, ks: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let m = images.len() / d;
    let row = |v: &[f64], i: usize| v[i * d..(i + 1) * d].to_vec();
    let recall = |query: &dyn Fn(usize) -> Vec<f64>, cand: &dyn Fn(usize) -> Vec<f64>, k: usize| {
        let mut hits = 0;
        for i in 0..m {
            let mut order: Vec<(usize, f64)> = (0..m).map(|j| (j, cos64(&query(i), &cand(j)))).collect();
            order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            if order[..k].iter().any(|&(j, _)| j == i) {
                hits += 1;
            }
        }
        100.0 * hits as f64 / m as f64
    };
    let img = |i: usize| row(images, i);
    let txt = |i: usize| row(texts, i);
    (ks.iter().map(|&k| recall(&img, &txt, k)).collect(), ks.iter().map(|&k| recall(&txt, &img, k)).collect())
}

/// (per-query IoU, mIoU, cIoU, AP per threshold) by looping over pixels.
pub fn pixel_loop_grounding(
    features: &[f64],
    d: usize,
    queries: &[f64],
    masks: &[Vec<bool>],
    thresholds: &[f64],
) -> (Vec<f64>, f64, f64, Vec<f64>) {
    let k = masks.len();
    let n = features.len() / d;
    let mut inter = vec![0usize; k];
    let mut union = vec![0usize; k];
    for p in 0..n {
        let f = &features[p * d..(p + 1) * d];
        let sims: Vec<f64> = (0..k).map(|q| cos64(f, &queries[q * d..(q + 1) * d])).collect();
        let mut label = 0;
        for q in 1..k {
            if sims[q] > sims[label] {
                label = q;
            }
        }
        for q in 0..k {
            let (pr, gt) = (label == q, masks[q][p]);
            inter[q] += (pr && gt) as usize;
            union[q] += (pr || gt) as usize;
        }
    }
    let ious: Vec<f64> = (0..k).map(|q| inter[q] as f64 / union[q] as f64).collect();
    let miou = ious.iter().sum::<f64>() / k as f64;
    let ciou = inter.iter().sum::<usize>() as f64 / union.iter().sum::<usize>() as f64;
    let ap = thresholds.iter().map(|&t| ious.iter().filter(|&&i| i >= t).count() as f64 / k as f64).collect();
    (ious, miou, ciou, ap)
}

/// SSIM with an explicit 11x11 window sum per pixel, zero padding outside.
pub fn direct_ssim(a: &[f64], b: &[f64], h: usize, w: usize, ch: usize) -> f64 {
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let gs: f64 = g.iter().sum();
    let (c1, c2) = (1e-4, 9e-4);
    let mut total = 0.0;
    for c in 0..ch {
        for y in 0..h {
            for x in 0..w {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..11 {
                    for dx in 0..11 {
                        let (sy, sx) = (y as isize + dy as isize - 5, x as isize + dx as isize - 5);
                        if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                            continue;
                        }
                        let wgt = g[dy] * g[dx] / (gs * gs);
                        let i = (sy as usize * w + sx as usize) * ch + c;
                        mx += wgt * a[i];
                        my += wgt * b[i];
                        xx += wgt * a[i] * a[i];
                        yy += wgt * b[i] * b[i];
                        xy += wgt * a[i] * b[i];
                    }
                }
                let (vx, vy, cxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
                total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
    }
    total / (h * w * ch) as f64
}
