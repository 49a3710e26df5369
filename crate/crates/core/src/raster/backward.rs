use std::ops::Range;

use rayon::prelude::*;

use super::render::{Channels, PreparedView};
use super::TRANSMITTANCE_MIN;
use crate::error::{dim_err, Error, Result};
use crate::feature::PixelMap;
use crate::scene::GaussianScene;

/// Upstream gradients for the rendered maps. `None` means zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct RenderGrads<'a> {
    pub rgb: Option<&'a PixelMap>,
    pub query_map: Option<&'a PixelMap>,
}

/// Per-primitive gradients, indexed by primitive (not by fragment).
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveGrads {
    pub color: Vec<[f64; 3]>,
    pub opacity_logit: Vec<f64>,
    /// `n x query_range.len()`, primitive-major.
    pub query: Vec<f64>,
    pub query_range: Option<Range<usize>>,
}

impl PrimitiveGrads {
    pub fn query_of(&self, primitive: usize) -> &[f64] {
        let q = self.query_range.as_ref().map_or(0, |r| r.len());
        &self.query[primitive * q..(primitive + 1) * q]
    }
}

struct Contributor {
    slot: usize,
    alpha: f64,
    transmittance: f64,
    gauss: f64,
    clamped: bool,
}

/// Analytic gradients of the composited channels with respect to color,
/// opacity logit and query of every primitive.
///
/// Geometry is treated as fixed. Payloads enter linearly, so `d out / d p_i =
/// a_i T_i`; fragments beyond early termination receive nothing. Per-tile partials
/// are merged in tile order, which keeps the result independent of thread count.
pub fn backward_render(
    view: &PreparedView,
    scene: &GaussianScene,
    channels: &Channels,
    grads: RenderGrads<'_>,
) -> Result<PrimitiveGrads> {
    channels.check(scene)?;
    if grads.rgb.is_some() && !channels.rgb {
        return Err(Error::Parameter("rgb gradient supplied but rgb was not rendered".into()));
    }
    if grads.query_map.is_some() && channels.query.is_none() {
        return Err(Error::Parameter("query gradient supplied but no query channels were rendered".into()));
    }
    let qw = channels.query_width();
    for (map, want, what) in [(grads.rgb, 3, "rgb"), (grads.query_map, qw, "query")] {
        if let Some(m) = map {
            if (m.height, m.width, m.channels) != (view.height, view.width, want) {
                return Err(dim_err(format!(
                    "{what} gradient is {}x{}x{}, expected {}x{}x{want}",
                    m.height, m.width, m.channels, view.height, view.width
                )));
            }
        }
    }

    let c = channels.width();
    let rgb_w = channels.rgb_width();
    let payloads = channels.gather(scene, &view.fragments);

    let partials: Vec<Vec<f64>> =
        (0..view.tile_count()).into_par_iter().map(|t| backward_tile(view, t, &payloads, c, rgb_w, &grads)).collect();

    let n = scene.len();
    let mut color = vec![[0.0; 3]; n];
    let mut opacity_logit = vec![0.0; n];
    let mut query = vec![0.0; n * qw];
    let stride = c + 1;
    for (t, partial) in partials.iter().enumerate() {
        if partial.is_empty() {
            continue;
        }
        for (slot, &fi) in view.tile_fragments(t).iter().enumerate() {
            let frag = &view.fragments[fi as usize];
            let g = &partial[slot * stride..(slot + 1) * stride];
            let prim = frag.index;
            if channels.rgb {
                for k in 0..3 {
                    color[prim][k] += g[k];
                }
            }
            for k in 0..qw {
                query[prim * qw + k] += g[rgb_w + k];
            }
            opacity_logit[prim] += g[c];
        }
    }
    Ok(PrimitiveGrads { color, opacity_logit, query, query_range: channels.query.clone() })
}

fn backward_tile(
    view: &PreparedView,
    t: usize,
    payloads: &[f64],
    c: usize,
    rgb_w: usize,
    grads: &RenderGrads<'_>,
) -> Vec<f64> {
    let list = view.tile_fragments(t);
    if list.is_empty() {
        return Vec::new();
    }
    let stride = c + 1;
    let mut acc = vec![0.0; list.len() * stride];
    let mut g = vec![0.0; c];
    let mut contributors: Vec<Contributor> = Vec::new();
    let (xs, ys) = view.tile_rect(t);
    for y in ys {
        for x in xs.clone() {
            let pix = y * view.width + x;
            if let Some(m) = grads.rgb {
                g[..rgb_w].copy_from_slice(m.pixel(pix));
            } else {
                g[..rgb_w].fill(0.0);
            }
            if let Some(m) = grads.query_map {
                g[rgb_w..].copy_from_slice(m.pixel(pix));
            } else {
                g[rgb_w..].fill(0.0);
            }
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }

            contributors.clear();
            let mut transmittance = 1.0;
            for (slot, &fi) in list.iter().enumerate() {
                if transmittance < TRANSMITTANCE_MIN {
                    break;
                }
                let Some(pa) = view.fragments[fi as usize].pixel_alpha(x, y) else {
                    continue;
                };
                contributors.push(Contributor {
                    slot,
                    alpha: pa.alpha,
                    transmittance,
                    gauss: pa.gauss,
                    clamped: pa.clamped,
                });
                transmittance *= 1.0 - pa.alpha;
            }

            // tail = sum over later contributors k of (p_k . g) a_k T_k
            let mut tail = 0.0;
            for ct in contributors.iter().rev() {
                let fi = list[ct.slot] as usize;
                let p = &payloads[fi * c..(fi + 1) * c];
                let pg: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
                let weight = ct.alpha * ct.transmittance;
                let dst = &mut acc[ct.slot * stride..(ct.slot + 1) * stride];
                for (d, gv) in dst[..c].iter_mut().zip(&g) {
                    *d += weight * gv;
                }
                if !ct.clamped {
                    let d_alpha = ct.transmittance * pg - tail / (1.0 - ct.alpha);
                    let sigma = view.fragments[fi].opacity;
                    dst[c] += d_alpha * sigma * (1.0 - sigma) * ct.gauss;
                }
                tail += pg * weight;
            }
        }
    }
    acc
}
