//! Gaussian memory attention: `softmax(q W_m PSC^T) PSC`, per pixel.
//!
//! The query is first lifted to feature space by `W_m`, compared against every
//! PSC row, and the softmax weights mix the PSC rows back into a full feature.
//! PSC is frozen; only queries, `W_m` and an optional learned temperature
//! receive gradients.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::MemoryBank;
use crate::error::{dim_err, Error, Result};
use crate::feature::PixelMap;

/// Rows per work item. Fixed so that reductions do not depend on thread count.
const ROW_BLOCK: usize = 64;

/// Logit scaling applied before the softmax.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Temperature {
    /// Raw `q W_m PSC^T`.
    None,
    /// Divide by `sqrt(d)`.
    #[default]
    InvSqrtD,
    /// Multiply by a constant.
    Fixed(f64),
    /// `lambda / sqrt(d)` with a trainable `lambda`.
    Learned(f64),
}

impl Temperature {
    pub fn scale(&self, dim: usize) -> f64 {
        let inv = 1.0 / (dim as f64).sqrt();
        match *self {
            Temperature::None => 1.0,
            Temperature::InvSqrtD => inv,
            Temperature::Fixed(c) => c,
            Temperature::Learned(lambda) => lambda * inv,
        }
    }
}

/// How logits are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    /// `(q W_m) . psc_k`: `O(s d + t d)` per row.
    Direct,
    /// Precompute `K = W_m PSC^T` (`s x t`) once; `O(s t)` per row.
    Factored,
    /// Pick by estimated cost for the number of rows.
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// `h x w x d` reconstructed features.
    pub features: PixelMap,
    /// `h x w x t` softmax weights, kept only when tracing.
    pub weights: Option<PixelMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads {
    /// Gradient with respect to the query map, same shape.
    pub query: PixelMap,
    /// `s x d` gradient with respect to `W_m`.
    pub w_m: Vec<f64>,
    /// Gradient with respect to `lambda` for [`Temperature::Learned`].
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopEntry {
    pub psc_index: usize,
    pub weight: f64,
    /// Row of the flattened raw features this PSC row was copied from.
    pub source_row: u32,
}

struct Kernel {
    s: usize,
    t: usize,
    d: usize,
    scale: f64,
    psc: Vec<f64>,
    w_m: Vec<f64>,
    /// `s x t`, present for the factored route.
    factored: Option<Vec<f64>>,
}

impl Kernel {
    fn new(bank: &MemoryBank, temperature: Temperature, route: Route, rows: usize) -> Result<Self> {
        bank.validate()?;
        if bank.degree == 0 {
            return Err(Error::Parameter(format!("bank '{}' has no memory projection", bank.model_name)));
        }
        let (s, t, d) = (bank.degree, bank.len(), bank.dim);
        let psc: Vec<f64> = bank.psc.iter().map(|&v| v as f64).collect();
        let w_m: Vec<f64> = bank.w_m.iter().map(|&v| v as f64).collect();
        let factored = match route {
            Route::Direct => false,
            Route::Factored => true,
            Route::Auto => {
                let direct = rows * (s * d + t * d);
                let factored = rows * s * t + s * t * d;
                factored < direct
            }
        };
        let factored = factored.then(|| {
            let mut k = vec![0.0; s * t];
            for i in 0..s {
                let wi = &w_m[i * d..(i + 1) * d];
                for j in 0..t {
                    k[i * t + j] = dot(wi, &psc[j * d..(j + 1) * d]);
                }
            }
            k
        });
        Ok(Self { s, t, d, scale: temperature.scale(d), psc, w_m, factored })
    }

    /// Unscaled logits `q W_m PSC^T` into `z` (`t`), using `lifted` (`d`) as scratch.
    fn raw_logits(&self, q: &[f64], lifted: &mut [f64], z: &mut [f64]) {
        let (s, t, d) = (self.s, self.t, self.d);
        if let Some(k) = &self.factored {
            z.fill(0.0);
            for i in 0..s {
                let qi = q[i];
                for j in 0..t {
                    z[j] += qi * k[i * t + j];
                }
            }
        } else {
            lifted.fill(0.0);
            for i in 0..s {
                let qi = q[i];
                for (u, w) in lifted.iter_mut().zip(&self.w_m[i * d..(i + 1) * d]) {
                    *u += qi * w;
                }
            }
            for j in 0..t {
                z[j] = dot(lifted, &self.psc[j * d..(j + 1) * d]);
            }
        }
    }

    /// Softmax weights into `w`; `raw` receives the unscaled logits.
    fn weights(&self, q: &[f64], lifted: &mut [f64], raw: &mut [f64], w: &mut [f64]) {
        self.raw_logits(q, lifted, raw);
        for (wk, &r) in w.iter_mut().zip(raw.iter()) {
            *wk = r * self.scale;
        }
        softmax_in_place(w);
    }

    fn mix(&self, w: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (k, &wk) in w.iter().enumerate() {
            for (o, p) in out.iter_mut().zip(&self.psc[k * self.d..(k + 1) * self.d]) {
                *o += wk * p;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Max-subtracted softmax.
pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

fn check_queries(query_map: &PixelMap, bank: &MemoryBank) -> Result<()> {
    if query_map.channels != bank.degree {
        return Err(dim_err(format!(
            "query map has {} channels, bank '{}' expects degree {}",
            query_map.channels, bank.model_name, bank.degree
        )));
    }
    if !query_map.is_finite() {
        return Err(Error::Parameter("query map holds non-finite values".into()));
    }
    Ok(())
}

/// Reconstructs full-dimensional features from a rendered query map.
pub fn attend(
    query_map: &PixelMap,
    bank: &MemoryBank,
    temperature: Temperature,
    keep_weights: bool,
) -> Result<AttentionOutput> {
    attend_with_route(query_map, bank, temperature, keep_weights, Route::Auto)
}

pub fn attend_with_route(
    query_map: &PixelMap,
    bank: &MemoryBank,
    temperature: Temperature,
    keep_weights: bool,
    route: Route,
) -> Result<AttentionOutput> {
    check_queries(query_map, bank)?;
    let n = query_map.pixel_count();
    let kernel = Kernel::new(bank, temperature, route, n)?;
    let (s, t, d) = (kernel.s, kernel.t, kernel.d);

    let mut features = PixelMap::zeros(query_map.height, query_map.width, d);
    let mut weights = keep_weights.then(|| PixelMap::zeros(query_map.height, query_map.width, t));
    let weight_blocks: Vec<Option<&mut [f64]>> = match weights.as_mut() {
        Some(w) => w.data.chunks_mut(ROW_BLOCK * t).map(Some).collect(),
        None => (0..n.div_ceil(ROW_BLOCK)).map(|_| None).collect(),
    };
    features
        .data
        .par_chunks_mut(ROW_BLOCK * d)
        .zip(query_map.data.par_chunks(ROW_BLOCK * s))
        .zip(weight_blocks)
        .for_each(|((out, qs), mut wblock)| {
            let mut lifted = vec![0.0; d];
            let mut raw = vec![0.0; t];
            let mut w = vec![0.0; t];
            for (r, (o, q)) in out.chunks_mut(d).zip(qs.chunks(s)).enumerate() {
                kernel.weights(q, &mut lifted, &mut raw, &mut w);
                kernel.mix(&w, o);
                if let Some(wb) = wblock.as_deref_mut() {
                    wb[r * t..(r + 1) * t].copy_from_slice(&w);
                }
            }
        });
    Ok(AttentionOutput { features, weights })
}

/// Gradients of `sum(upstream * attend(query_map))` with respect to the
/// queries, `W_m` and, for a learned temperature, `lambda`.
pub fn attend_backward(
    query_map: &PixelMap,
    bank: &MemoryBank,
    temperature: Temperature,
    upstream: &PixelMap,
) -> Result<AttentionGrads> {
    attend_backward_with_route(query_map, bank, temperature, upstream, Route::Auto)
}

pub fn attend_backward_with_route(
    query_map: &PixelMap,
    bank: &MemoryBank,
    temperature: Temperature,
    upstream: &PixelMap,
    route: Route,
) -> Result<AttentionGrads> {
    check_queries(query_map, bank)?;
    if (upstream.height, upstream.width, upstream.channels) != (query_map.height, query_map.width, bank.dim) {
        return Err(dim_err(format!(
            "upstream gradient is {}x{}x{}, expected {}x{}x{}",
            upstream.height, upstream.width, upstream.channels, query_map.height, query_map.width, bank.dim
        )));
    }
    let n = query_map.pixel_count();
    let kernel = Kernel::new(bank, temperature, route, n)?;
    let (s, t, d) = (kernel.s, kernel.t, kernel.d);
    let factored = kernel.factored.is_some();
    // per block: accumulated dW (s x d) or dK (s x t), then d(scale) numerator
    let acc_len = if factored { s * t } else { s * d };

    let mut grad_q = PixelMap::zeros(query_map.height, query_map.width, s);
    let partials: Vec<(Vec<f64>, f64)> = grad_q
        .data
        .par_chunks_mut(ROW_BLOCK * s)
        .zip(query_map.data.par_chunks(ROW_BLOCK * s))
        .zip(upstream.data.par_chunks(ROW_BLOCK * d))
        .map(|((gq_block, q_block), g_block)| {
            let mut acc = vec![0.0; acc_len];
            let mut d_scale = 0.0;
            let mut lifted = vec![0.0; d];
            let mut raw = vec![0.0; t];
            let mut w = vec![0.0; t];
            let mut dz = vec![0.0; t];
            let mut du = vec![0.0; d];
            for ((gq, q), g) in gq_block.chunks_mut(s).zip(q_block.chunks(s)).zip(g_block.chunks(d)) {
                if g.iter().all(|&v| v == 0.0) {
                    continue;
                }
                kernel.weights(q, &mut lifted, &mut raw, &mut w);
                let mut mean = 0.0;
                for k in 0..t {
                    dz[k] = dot(g, &kernel.psc[k * d..(k + 1) * d]);
                    mean += w[k] * dz[k];
                }
                for k in 0..t {
                    dz[k] = w[k] * (dz[k] - mean);
                    d_scale += dz[k] * raw[k];
                }
                let c = kernel.scale;
                if let Some(kmat) = &kernel.factored {
                    for i in 0..s {
                        let row = &kmat[i * t..(i + 1) * t];
                        gq[i] = c * dot(row, &dz);
                        let qi = c * q[i];
                        for k in 0..t {
                            acc[i * t + k] += qi * dz[k];
                        }
                    }
                } else {
                    du.fill(0.0);
                    for k in 0..t {
                        let f = c * dz[k];
                        for (u, p) in du.iter_mut().zip(&kernel.psc[k * d..(k + 1) * d]) {
                            *u += f * p;
                        }
                    }
                    for i in 0..s {
                        let wi = &kernel.w_m[i * d..(i + 1) * d];
                        gq[i] = dot(wi, &du);
                        let qi = q[i];
                        for (a, u) in acc[i * d..(i + 1) * d].iter_mut().zip(&du) {
                            *a += qi * u;
                        }
                    }
                }
            }
            (acc, d_scale)
        })
        .collect();

    let mut acc = vec![0.0; acc_len];
    let mut d_scale = 0.0;
    for (part, ds) in &partials {
        for (a, p) in acc.iter_mut().zip(part) {
            *a += p;
        }
        d_scale += ds;
    }
    let grad_w = if factored {
        // dW = dK PSC
        let mut gw = vec![0.0; s * d];
        for i in 0..s {
            for k in 0..t {
                let f = acc[i * t + k];
                for (g, p) in gw[i * d..(i + 1) * d].iter_mut().zip(&kernel.psc[k * d..(k + 1) * d]) {
                    *g += f * p;
                }
            }
        }
        gw
    } else {
        acc
    };
    let temperature_grad = match temperature {
        Temperature::Learned(_) => Some(d_scale / (d as f64).sqrt()),
        _ => None,
    };
    Ok(AttentionGrads { query: grad_q, w_m: grad_w, temperature: temperature_grad })
}

/// The `k` largest attention weights of one query, descending, ties to the
/// lower PSC index, with the raw row each PSC entry came from.
pub fn trace_top_k(query: &[f64], bank: &MemoryBank, temperature: Temperature, k: usize) -> Result<Vec<TopEntry>> {
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    if k > bank.len() {
        return Err(Error::Parameter(format!("k = {k} exceeds bank size {}", bank.len())));
    }
    let map = PixelMap::from_data(1, 1, query.len(), query.to_vec())?;
    let out = attend(&map, bank, temperature, true)?;
    let w = out.weights.expect("weights were requested");
    let mut order: Vec<usize> = (0..bank.len()).collect();
    order.sort_by(|&a, &b| w.data[b].total_cmp(&w.data[a]).then(a.cmp(&b)));
    Ok(order
        .into_iter()
        .take(k)
        .map(|i| TopEntry { psc_index: i, weight: w.data[i], source_row: bank.selected_indices[i] })
        .collect())
}
