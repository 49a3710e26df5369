//! Dense feature maps and the M3FT container.
//!
//! M3FT layout: `"M3FT" | version u32 | name | n u32 | h u32 | w u32 | d u32 | f32[n*h*w*d]`,
//! row-major `[view][row][col][dim]`, little endian. Lists of embeddings use
//! `n = 1, h = 1, w = m`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio;
use crate::error::{dim_err, format_err, Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"M3FT";

/// Working-precision `h x w x c` map, used for render outputs and gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl PixelMap {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn from_data(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(dim_err(format!("map data has {} values, expected {height}x{width}x{channels}", data.len())));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn pixel_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.channels;
        &mut self.data[i * c..(i + 1) * c]
    }

    /// Copies channels `range` of every pixel into a new map.
    pub fn slice_channels(&self, range: std::ops::Range<usize>) -> PixelMap {
        let c = range.len();
        let mut out = PixelMap::zeros(self.height, self.width, c);
        for i in 0..self.pixel_count() {
            out.pixel_mut(i).copy_from_slice(&self.pixel(i)[range.clone()]);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }
}

/// Raw or rendered features for one model: `n` views of `h x w` pixels of dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub model_name: String,
    pub n_views: usize,
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl FeatureTensor {
    pub fn new(
        model_name: impl Into<String>,
        n_views: usize,
        height: usize,
        width: usize,
        dim: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        let t = Self { model_name: model_name.into(), n_views, height, width, dim, data };
        t.validate()?;
        Ok(t)
    }

    /// A list of `m` embeddings stored with the `n = 1, h = 1, w = m` convention.
    pub fn embedding_list(model_name: impl Into<String>, dim: usize, rows: Vec<f32>) -> Result<Self> {
        if dim == 0 || !rows.len().is_multiple_of(dim) {
            return Err(dim_err(format!("{} values do not form rows of dim {dim}", rows.len())));
        }
        let m = rows.len() / dim;
        Self::new(model_name, 1, 1, m, dim, rows)
    }

    /// Stacks single- or multi-view maps of the same shape.
    pub fn from_maps(model_name: impl Into<String>, maps: &[PixelMap]) -> Result<Self> {
        let first = maps.first().ok_or_else(|| dim_err("no maps to stack"))?;
        let mut data = Vec::with_capacity(maps.len() * first.data.len());
        for m in maps {
            if (m.height, m.width, m.channels) != (first.height, first.width, first.channels) {
                return Err(dim_err("maps differ in shape"));
            }
            data.extend(m.data.iter().map(|&v| v as f32));
        }
        Self::new(model_name, maps.len(), first.height, first.width, first.channels, data)
    }

    /// Concatenates views of tensors that share model, spatial size and dim.
    pub fn concat(parts: &[FeatureTensor]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| dim_err("nothing to concatenate"))?;
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if (p.height, p.width, p.dim) != (first.height, first.width, first.dim) {
                return Err(dim_err(format!(
                    "cannot concatenate {}x{}x{} with {}x{}x{}",
                    p.height, p.width, p.dim, first.height, first.width, first.dim
                )));
            }
            n += p.n_views;
            data.extend_from_slice(&p.data);
        }
        Self::new(first.model_name.clone(), n, first.height, first.width, first.dim, data)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(dim_err("feature dimension must be positive"));
        }
        let expected = self.n_views * self.height * self.width * self.dim;
        if self.data.len() != expected {
            return Err(dim_err(format!("feature data has {} values, header implies {expected}", self.data.len())));
        }
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!("non-finite feature value in row {}", i / self.dim)));
        }
        Ok(())
    }

    /// Number of flattened rows `n * h * w`.
    pub fn rows(&self) -> usize {
        self.n_views * self.height * self.width
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn view_pixels(&self) -> usize {
        self.height * self.width
    }

    /// Rows of view `v`, row-major over pixels.
    pub fn view(&self, v: usize) -> &[f32] {
        let stride = self.view_pixels() * self.dim;
        &self.data[v * stride..(v + 1) * stride]
    }

    /// Copy of one view as a standalone single-view tensor.
    pub fn single_view(&self, v: usize) -> Result<FeatureTensor> {
        if v >= self.n_views {
            return Err(dim_err(format!("view {v} out of range ({} views)", self.n_views)));
        }
        Self::new(self.model_name.clone(), 1, self.height, self.width, self.dim, self.view(v).to_vec())
    }

    pub fn view_map(&self, v: usize) -> PixelMap {
        PixelMap {
            height: self.height,
            width: self.width,
            channels: self.dim,
            data: self.view(v).iter().map(|&x| x as f64).collect(),
        }
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
        binio::write_header(w, FEATURE_MAGIC)?;
        binio::write_name(w, &self.model_name)?;
        for (v, what) in
            [(self.n_views, "view count"), (self.height, "height"), (self.width, "width"), (self.dim, "dim")]
        {
            binio::write_u32(w, binio::to_u32(v, what)?)?;
        }
        binio::write_f32_slice(w, &self.data)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_header(r, FEATURE_MAGIC)?;
        let name = binio::read_name(r)?;
        let n = binio::read_u32(r, "view count")?;
        let h = binio::read_u32(r, "height")?;
        let w = binio::read_u32(r, "width")?;
        let d = binio::read_u32(r, "dim")?;
        if d == 0 {
            return Err(format_err("feature dimension must be positive"));
        }
        let len = binio::checked_len(&[n, h, w, d])?;
        let data = binio::read_f32_vec(r, len, "feature data")?;
        binio::expect_eof(r)?;
        Self::new(name, n as usize, h as usize, w as usize, d as usize, data)
    }
}
