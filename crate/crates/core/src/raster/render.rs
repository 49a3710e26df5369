use std::ops::Range;

use rayon::prelude::*;

use super::project::{project, SplatFragment};
use super::{TILE_SIZE, TRANSMITTANCE_MIN};
use crate::error::{dim_err, Result};
use crate::feature::PixelMap;
use crate::scene::{Camera, GaussianScene};

/// Which payloads to composite.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Channels {
    pub rgb: bool,
    /// Query channels to render, a sub-range of `0..l`.
    pub query: Option<Range<usize>>,
}

impl Channels {
    pub fn rgb() -> Self {
        Self { rgb: true, query: None }
    }

    pub fn query(range: Range<usize>) -> Self {
        Self { rgb: false, query: Some(range) }
    }

    pub fn rgb_and_query(range: Range<usize>) -> Self {
        Self { rgb: true, query: Some(range) }
    }

    pub(crate) fn width(&self) -> usize {
        self.rgb_width() + self.query_width()
    }

    pub(crate) fn rgb_width(&self) -> usize {
        if self.rgb {
            3
        } else {
            0
        }
    }

    pub(crate) fn query_width(&self) -> usize {
        self.query.as_ref().map_or(0, |r| r.len())
    }

    pub(crate) fn check(&self, scene: &GaussianScene) -> Result<()> {
        if let Some(r) = &self.query {
            if r.start > r.end || r.end > scene.query_len() {
                return Err(dim_err(format!("query channels {r:?} outside the scene's 0..{}", scene.query_len())));
            }
        }
        Ok(())
    }

    /// Packs the selected payloads of every fragment, fragment-major.
    pub(crate) fn gather(&self, scene: &GaussianScene, fragments: &[SplatFragment]) -> Vec<f64> {
        let mut out = Vec::with_capacity(fragments.len() * self.width());
        for f in fragments {
            let prim = &scene.primitives[f.index];
            if self.rgb {
                out.extend(prim.color_sh.iter().map(|&c| c as f64));
            }
            if let Some(r) = &self.query {
                out.extend(prim.query[r.clone()].iter().map(|&q| q as f64));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub rgb: Option<PixelMap>,
    /// Rendered principal queries for the requested channel range.
    pub query_map: Option<PixelMap>,
    pub query_range: Option<Range<usize>>,
    /// Accumulated opacity `1 - T_final`.
    pub alpha_map: PixelMap,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub primitive: usize,
    pub depth: f64,
    pub alpha: f64,
    /// Transmittance in front of this fragment.
    pub transmittance: f64,
}

/// Projected, depth-sorted and tile-binned fragments of one scene in one camera.
///
/// Holds everything the forward and backward passes share; per-pixel alphas and
/// transmittances are recomputed on demand.
#[derive(Debug, Clone)]
pub struct PreparedView {
    pub width: usize,
    pub height: usize,
    pub fragments: Vec<SplatFragment>,
    tiles_x: usize,
    tiles_y: usize,
    tile_lists: Vec<Vec<u32>>,
}

impl PreparedView {
    pub fn new(scene: &GaussianScene, camera: &Camera) -> Self {
        let mut fragments: Vec<SplatFragment> =
            scene.primitives.par_iter().enumerate().filter_map(|(i, p)| project(p, i, camera)).collect();
        fragments.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));

        let tiles_x = camera.width.div_ceil(TILE_SIZE);
        let tiles_y = camera.height.div_ceil(TILE_SIZE);
        let mut tile_lists = vec![Vec::new(); tiles_x * tiles_y];
        for (k, f) in fragments.iter().enumerate() {
            let [x0, x1, y0, y1] = f.bounds;
            for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
                for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                    tile_lists[ty * tiles_x + tx].push(k as u32);
                }
            }
        }
        Self { width: camera.width, height: camera.height, fragments, tiles_x, tiles_y, tile_lists }
    }

    pub fn tile_count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    /// Fragment indices (into `fragments`, depth order) overlapping tile `t`.
    pub fn tile_fragments(&self, t: usize) -> &[u32] {
        &self.tile_lists[t]
    }

    /// Pixel rectangle `(x0..x1, y0..y1)` of tile `t`.
    pub fn tile_rect(&self, t: usize) -> (Range<usize>, Range<usize>) {
        let (tx, ty) = (t % self.tiles_x, t / self.tiles_x);
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        (x0..(x0 + TILE_SIZE).min(self.width), y0..(y0 + TILE_SIZE).min(self.height))
    }

    /// Composited fragments of pixel `(x, y)` in order, with the transmittance
    /// each one saw.
    pub fn pixel_trace(&self, x: usize, y: usize) -> Vec<TraceEntry> {
        let t = (y / TILE_SIZE) * self.tiles_x + x / TILE_SIZE;
        let mut out = Vec::new();
        let mut transmittance = 1.0;
        for &fi in &self.tile_lists[t] {
            if transmittance < TRANSMITTANCE_MIN {
                break;
            }
            let frag = &self.fragments[fi as usize];
            let Some(pa) = frag.pixel_alpha(x, y) else {
                continue;
            };
            out.push(TraceEntry { primitive: frag.index, depth: frag.depth, alpha: pa.alpha, transmittance });
            transmittance *= 1.0 - pa.alpha;
        }
        out
    }

    pub fn render(&self, scene: &GaussianScene, channels: &Channels) -> Result<RenderOutput> {
        channels.check(scene)?;
        let c = channels.width();
        let payloads = channels.gather(scene, &self.fragments);

        let tiles: Vec<(Vec<f64>, Vec<f64>)> =
            (0..self.tile_count()).into_par_iter().map(|t| self.render_tile(t, &payloads, c)).collect();

        let mut values = PixelMap::zeros(self.height, self.width, c);
        let mut alpha = PixelMap::zeros(self.height, self.width, 1);
        for (t, (tile_values, tile_alpha)) in tiles.iter().enumerate() {
            let (xs, ys) = self.tile_rect(t);
            let mut k = 0;
            for y in ys {
                for x in xs.clone() {
                    let pix = y * self.width + x;
                    values.pixel_mut(pix).copy_from_slice(&tile_values[k * c..(k + 1) * c]);
                    alpha.data[pix] = tile_alpha[k];
                    k += 1;
                }
            }
        }

        let rgb_w = channels.rgb_width();
        let rgb = channels.rgb.then(|| values.slice_channels(0..3));
        let query_map = channels.query.as_ref().map(|_| values.slice_channels(rgb_w..c));
        Ok(RenderOutput { rgb, query_map, query_range: channels.query.clone(), alpha_map: alpha })
    }

    fn render_tile(&self, t: usize, payloads: &[f64], c: usize) -> (Vec<f64>, Vec<f64>) {
        let (xs, ys) = self.tile_rect(t);
        let list = &self.tile_lists[t];
        let n = xs.len() * ys.len();
        let mut values = vec![0.0; n * c];
        let mut alphas = vec![0.0; n];
        let mut k = 0;
        for y in ys {
            for x in xs.clone() {
                let out = &mut values[k * c..(k + 1) * c];
                let mut transmittance = 1.0;
                for &fi in list {
                    if transmittance < TRANSMITTANCE_MIN {
                        break;
                    }
                    let fi = fi as usize;
                    let Some(pa) = self.fragments[fi].pixel_alpha(x, y) else {
                        continue;
                    };
                    let w = pa.alpha * transmittance;
                    for (o, p) in out.iter_mut().zip(&payloads[fi * c..(fi + 1) * c]) {
                        *o += p * w;
                    }
                    transmittance *= 1.0 - pa.alpha;
                }
                alphas[k] = 1.0 - transmittance;
                k += 1;
            }
        }
        (values, alphas)
    }
}

/// Renders the requested channels of `scene` as seen from `camera`.
pub fn render_view(scene: &GaussianScene, camera: &Camera, channels: &Channels) -> Result<RenderOutput> {
    PreparedView::new(scene, camera).render(scene, channels)
}
