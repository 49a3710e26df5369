//! Principal scene components: a deduplicated subset of raw feature rows, plus
//! the learnable projection that lifts principal queries into feature space.
//!
//! M3PB layout, little endian:
//! `"M3PB" | version u32 | name | t u32 | d u32 | s u32 | theta f32 | indices u32[t] | psc f32[t*d] | w_m f32[s*d]`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::binio;
use crate::error::{dim_err, format_err, Error, Result};
use crate::feature::FeatureTensor;

pub const BANK_MAGIC: &[u8; 4] = b"M3PB";
pub const DEFAULT_THETA: f32 = 0.9;
pub const DEFAULT_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    pub model_name: String,
    pub dim: usize,
    /// `t x d`, row-major. Each row is a verbatim copy of a raw feature row.
    pub psc: Vec<f32>,
    /// Source row of each PSC row in the flattened raw features, ascending.
    pub selected_indices: Vec<u32>,
    pub theta: f32,
    /// Query degree `s`; zero until [`MemoryBank::init_projection`].
    pub degree: usize,
    /// `s x d` memory projection.
    pub w_m: Vec<f32>,
}

impl MemoryBank {
    /// Bank with explicit rows and no projection yet.
    pub fn from_rows(
        model_name: impl Into<String>,
        dim: usize,
        psc: Vec<f32>,
        selected_indices: Vec<u32>,
        theta: f32,
    ) -> Result<Self> {
        let bank =
            Self { model_name: model_name.into(), dim, psc, selected_indices, theta, degree: 0, w_m: Vec::new() };
        bank.validate()?;
        Ok(bank)
    }

    /// Number of PSC rows `t`.
    pub fn len(&self) -> usize {
        self.selected_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected_indices.is_empty()
    }

    pub fn row(&self, k: usize) -> &[f32] {
        &self.psc[k * self.dim..(k + 1) * self.dim]
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(dim_err("bank dimension must be positive"));
        }
        let t = self.selected_indices.len();
        if t == 0 {
            return Err(dim_err("bank has no rows"));
        }
        if self.psc.len() != t * self.dim {
            return Err(dim_err(format!("psc has {} values, expected {t}x{}", self.psc.len(), self.dim)));
        }
        if self.w_m.len() != self.degree * self.dim {
            return Err(dim_err(format!("w_m has {} values, expected {}x{}", self.w_m.len(), self.degree, self.dim)));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::Parameter(format!("theta {} outside (0, 1]", self.theta)));
        }
        if self.selected_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(format_err("selected indices are not strictly ascending"));
        }
        if self.psc.iter().chain(&self.w_m).any(|v| !v.is_finite()) {
            return Err(Error::Parameter("bank holds non-finite values".into()));
        }
        Ok(())
    }

    /// Sets `s` and draws `W_m` entries from `Normal(0, 1/sqrt(d))` with a seeded generator.
    pub fn init_projection(mut self, degree: usize, seed: u64) -> Result<Self> {
        if degree == 0 {
            return Err(Error::Parameter("query degree must be at least 1".into()));
        }
        let std = 1.0 / (self.dim as f64).sqrt();
        let normal = Normal::new(0.0, std).map_err(|e| Error::Parameter(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.w_m = (0..degree * self.dim).map(|_| normal.sample(&mut rng) as f32).collect();
        self.degree = degree;
        Ok(self)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        self.validate()?;
        binio::write_header(w, BANK_MAGIC)?;
        binio::write_name(w, &self.model_name)?;
        binio::write_u32(w, binio::to_u32(self.len(), "bank size")?)?;
        binio::write_u32(w, binio::to_u32(self.dim, "dim")?)?;
        binio::write_u32(w, binio::to_u32(self.degree, "degree")?)?;
        binio::write_f32(w, self.theta)?;
        for &i in &self.selected_indices {
            binio::write_u32(w, i)?;
        }
        binio::write_f32_slice(w, &self.psc)?;
        binio::write_f32_slice(w, &self.w_m)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_header(r, BANK_MAGIC)?;
        let model_name = binio::read_name(r)?;
        let t = binio::read_u32(r, "bank size")?;
        let d = binio::read_u32(r, "dim")?;
        let s = binio::read_u32(r, "degree")?;
        let theta = binio::read_f32(r, "theta")?;
        let mut selected_indices = Vec::with_capacity((t as usize).min(1 << 20));
        for _ in 0..t {
            selected_indices.push(binio::read_u32(r, "indices")?);
        }
        let psc = binio::read_f32_vec(r, binio::checked_len(&[t, d])?, "psc")?;
        let w_m = binio::read_f32_vec(r, binio::checked_len(&[s, d])?, "w_m")?;
        binio::expect_eof(r)?;
        let bank = Self { model_name, dim: d as usize, psc, selected_indices, theta, degree: s as usize, w_m };
        bank.validate()?;
        Ok(bank)
    }
}

/// Greedy similarity reduction of the flattened raw features.
///
/// Rows are visited in index order, `chunk` at a time. An unused row `j` is kept
/// iff none of the rows whose cosine similarity with it is at least `theta`
/// (itself included) has been used yet; keeping it marks all of them used.
/// Similarity lists for a chunk are computed in parallel, decisions are made
/// sequentially, so the result does not depend on `chunk`. The trailing partial
/// chunk is processed like any other.
pub fn reduce_similarity(raw: &FeatureTensor, theta: f32, chunk: usize) -> Result<MemoryBank> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::Parameter(format!("theta {theta} outside (0, 1]")));
    }
    if chunk == 0 {
        return Err(Error::Parameter("chunk size must be at least 1".into()));
    }
    raw.validate()?;
    let n = raw.rows();
    let d = raw.dim;
    if n == 0 {
        return Err(dim_err("no feature rows to reduce"));
    }

    let sq_norms: Vec<f64> =
        (0..n).into_par_iter().map(|i| raw.row(i).iter().map(|&v| v as f64 * v as f64).sum()).collect();
    if let Some(row) = sq_norms.iter().position(|&s| s == 0.0) {
        return Err(Error::ZeroNormRow { row });
    }

    // cosine of rows a, b; equals exactly 1 for identical rows and is symmetric
    let similarity = |a: usize, b: usize| -> f64 {
        let dot: f64 = raw.row(a).iter().zip(raw.row(b)).map(|(&x, &y)| x as f64 * y as f64).sum();
        dot / (sq_norms[a] * sq_norms[b]).sqrt()
    };
    let theta = theta as f64;

    let mut used = vec![false; n];
    let mut selected: Vec<u32> = Vec::new();
    for start in (0..n).step_by(chunk) {
        let end = (start + chunk).min(n);
        let candidates: Vec<usize> = (start..end).filter(|&j| !used[j]).collect();
        let similar: Vec<Vec<u32>> = candidates
            .par_iter()
            .map(|&j| (0..n).filter(|&i| similarity(j, i) >= theta).map(|i| i as u32).collect())
            .collect();
        for (&j, group) in candidates.iter().zip(&similar) {
            if used[j] {
                continue;
            }
            if group.iter().all(|&i| !used[i as usize]) {
                selected.push(j as u32);
                for &i in group {
                    used[i as usize] = true;
                }
            }
        }
    }

    let mut psc = Vec::with_capacity(selected.len() * d);
    for &i in &selected {
        psc.extend_from_slice(raw.row(i as usize));
    }
    MemoryBank::from_rows(raw.model_name.clone(), d, psc, selected, theta as f32)
}
