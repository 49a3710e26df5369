//! Gaussian primitives, scenes, cameras and the M3GS container.
//!
//! Persisted layout (all little endian):
//!
//! ```text
//! "M3GS" | version u32 | count u32 | l u32
//! count x [ centroid 3 | rotation 4 | log_scale 3 | opacity_logit 1 | color_sh 3 | query l ] f32
//! slices u32 | slices x [ name (u32 len + UTF-8) | start u32 | len u32 ]
//! ```

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::binio;
use crate::error::{dim_err, Error, Result};

pub const SCENE_MAGIC: &[u8; 4] = b"M3GS";

/// Scalars stored per primitive ahead of the query vector.
const FIXED_FIELDS: usize = 3 + 4 + 3 + 1 + 3;

/// Opacity of freshly initialized primitives.
pub const INIT_OPACITY: f32 = 0.1;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One anisotropic Gaussian.
///
/// `rotation` is a quaternion in `(w, x, y, z)` order. Scale and opacity are kept
/// in their optimization parameterization (log standard deviation, pre-sigmoid
/// logit). `color_sh` is the degree-0 color term and is used directly as linear RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrimitive {
    pub centroid: [f32; 3],
    pub rotation: [f32; 4],
    pub log_scale: [f32; 3],
    pub opacity_logit: f32,
    pub color_sh: [f32; 3],
    pub query: Vec<f32>,
}

impl GaussianPrimitive {
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit as f64)
    }

    pub fn scale(&self) -> [f64; 3] {
        self.log_scale.map(|s| (s as f64).exp())
    }

    /// Normalizes the rotation quaternion in place. A zero quaternion becomes identity.
    pub fn normalize_rotation(&mut self) {
        let n = self.rotation.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>().sqrt();
        if n == 0.0 || !n.is_finite() {
            self.rotation = [1.0, 0.0, 0.0, 0.0];
        } else {
            self.rotation = self.rotation.map(|c| (c as f64 / n) as f32);
        }
    }

    fn scalars(&self) -> impl Iterator<Item = f32> + '_ {
        self.centroid
            .iter()
            .chain(&self.rotation)
            .chain(&self.log_scale)
            .chain(std::iter::once(&self.opacity_logit))
            .chain(&self.color_sh)
            .chain(&self.query)
            .copied()
    }
}

/// The contiguous range of query channels owned by one foundation model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSlice {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

impl ModelSlice {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }
}

/// Partition of the query vector into per-model slices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QueryLayout {
    slices: Vec<ModelSlice>,
}

impl QueryLayout {
    /// Validates that the slices are disjoint, contiguous, non-empty, uniquely
    /// named and cover `[0, l)` once sorted by start.
    pub fn new(mut slices: Vec<ModelSlice>) -> Result<Self> {
        slices.sort_by_key(|s| s.start);
        let mut names = BTreeSet::new();
        let mut next = 0usize;
        for s in &slices {
            if s.len == 0 {
                return Err(dim_err(format!("slice '{}' has zero length", s.name)));
            }
            if s.start != next {
                return Err(dim_err(format!(
                    "slice '{}' starts at {} but previous slices end at {next}",
                    s.name, s.start
                )));
            }
            if !names.insert(s.name.as_str()) {
                return Err(dim_err(format!("duplicate slice name '{}'", s.name)));
            }
            next += s.len;
        }
        Ok(Self { slices })
    }

    /// Lays out models back to back in the given order.
    pub fn from_degrees<S: Into<String>>(degrees: impl IntoIterator<Item = (S, usize)>) -> Result<Self> {
        let mut start = 0;
        let slices = degrees
            .into_iter()
            .map(|(name, len)| {
                let s = ModelSlice { name: name.into(), start, len };
                start += len;
                s
            })
            .collect();
        Self::new(slices)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Total query length `l`.
    pub fn query_len(&self) -> usize {
        self.slices.last().map_or(0, |s| s.start + s.len)
    }

    pub fn slices(&self) -> &[ModelSlice] {
        &self.slices
    }

    pub fn get(&self, name: &str) -> Option<&ModelSlice> {
        self.slices.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScene {
    pub primitives: Vec<GaussianPrimitive>,
    pub layout: QueryLayout,
}

impl GaussianScene {
    pub fn new(primitives: Vec<GaussianPrimitive>, layout: QueryLayout) -> Result<Self> {
        let scene = Self { primitives, layout };
        scene.validate()?;
        Ok(scene)
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn query_len(&self) -> usize {
        self.layout.query_len()
    }

    /// Checks every structural invariant: non-empty, query lengths match the
    /// layout, finite fields and a non-degenerate rotation.
    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::EmptyScene);
        }
        let l = self.layout.query_len();
        for (i, p) in self.primitives.iter().enumerate() {
            if p.query.len() != l {
                return Err(dim_err(format!("primitive {i} has query length {}, layout requires {l}", p.query.len())));
            }
            if let Some(bad) = p.scalars().position(|v| !v.is_finite()) {
                return Err(Error::Parameter(format!("primitive {i} has a non-finite value at field offset {bad}")));
            }
            if p.rotation.iter().all(|&c| c == 0.0) {
                return Err(Error::Parameter(format!("primitive {i} has a zero quaternion")));
            }
        }
        Ok(())
    }

    /// Replaces the query layout, resetting every query to zeros of the new length.
    pub fn reset_queries(&mut self, layout: QueryLayout) {
        let l = layout.query_len();
        for p in &mut self.primitives {
            p.query = vec![0.0; l];
        }
        self.layout = layout;
    }

    pub fn normalize_rotations(&mut self) {
        for p in &mut self.primitives {
            p.normalize_rotation();
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
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
        binio::write_header(w, SCENE_MAGIC)?;
        binio::write_u32(w, binio::to_u32(self.primitives.len(), "primitive count")?)?;
        binio::write_u32(w, binio::to_u32(self.layout.query_len(), "query length")?)?;
        let mut record = Vec::with_capacity(FIXED_FIELDS + self.layout.query_len());
        for p in &self.primitives {
            record.clear();
            record.extend(p.scalars());
            binio::write_f32_slice(w, &record)?;
        }
        binio::write_u32(w, binio::to_u32(self.layout.slices().len(), "slice count")?)?;
        for s in self.layout.slices() {
            binio::write_name(w, &s.name)?;
            binio::write_u32(w, binio::to_u32(s.start, "slice start")?)?;
            binio::write_u32(w, binio::to_u32(s.len, "slice length")?)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_header(r, SCENE_MAGIC)?;
        let count = binio::read_u32(r, "primitive count")? as usize;
        let l = binio::read_u32(r, "query length")? as usize;
        if count == 0 {
            return Err(Error::EmptyScene);
        }
        let stride = FIXED_FIELDS + l;
        let mut record = vec![0f32; stride];
        let mut primitives = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            binio::read_f32_into(r, &mut record, "primitive record")?;
            primitives.push(GaussianPrimitive {
                centroid: [record[0], record[1], record[2]],
                rotation: [record[3], record[4], record[5], record[6]],
                log_scale: [record[7], record[8], record[9]],
                opacity_logit: record[10],
                color_sh: [record[11], record[12], record[13]],
                query: record[FIXED_FIELDS..].to_vec(),
            });
        }
        let n_slices = binio::read_u32(r, "slice count")? as usize;
        let mut slices = Vec::with_capacity(n_slices.min(1024));
        for _ in 0..n_slices {
            let name = binio::read_name(r)?;
            let start = binio::read_u32(r, "slice start")? as usize;
            let len = binio::read_u32(r, "slice length")? as usize;
            slices.push(ModelSlice { name, start, len });
        }
        binio::expect_eof(r)?;
        let layout = QueryLayout::new(slices)?;
        if layout.query_len() != l {
            return Err(dim_err(format!(
                "slices cover {} query channels but header declares l = {l}",
                layout.query_len()
            )));
        }
        Self::new(primitives, layout)
    }
}

/// Builds one primitive per colored point.
///
/// Scales are isotropic and equal to the mean distance to (up to) the three
/// nearest neighbors; a lone point gets unit scale. Rotations are identity,
/// opacities `logit(0.1)` and queries zero.
pub fn init_scene_from_points(points: &[([f32; 3], [f32; 3])], layout: QueryLayout) -> Result<GaussianScene> {
    if points.is_empty() {
        return Err(Error::EmptyScene);
    }
    let l = layout.query_len();
    let opacity_logit = logit(INIT_OPACITY as f64) as f32;
    let scales: Vec<f64> =
        points.par_iter().enumerate().map(|(i, (p, _))| mean_neighbor_distance(points, i, p)).collect();
    let primitives = points
        .iter()
        .zip(scales)
        .map(|((pos, rgb), scale)| GaussianPrimitive {
            centroid: *pos,
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: [scale.ln() as f32; 3],
            opacity_logit,
            color_sh: *rgb,
            query: vec![0.0; l],
        })
        .collect();
    GaussianScene::new(primitives, layout)
}

fn mean_neighbor_distance(points: &[([f32; 3], [f32; 3])], skip: usize, p: &[f32; 3]) -> f64 {
    const K: usize = 3;
    const MIN_DIST: f64 = 1e-7;
    let mut best = [f64::INFINITY; K];
    for (j, (q, _)) in points.iter().enumerate() {
        if j == skip {
            continue;
        }
        let d2: f64 = (0..3).map(|a| (p[a] as f64 - q[a] as f64).powi(2)).sum();
        if d2 < best[K - 1] {
            best[K - 1] = d2;
            best.sort_by(f64::total_cmp);
        }
    }
    let found: Vec<f64> = best.iter().filter(|d| d.is_finite()).map(|d| d.sqrt()).collect();
    if found.is_empty() {
        1.0
    } else {
        (found.iter().sum::<f64>() / found.len() as f64).max(MIN_DIST)
    }
}

/// Pinhole camera with a rigid world-to-camera transform.
///
/// Pixel `(x, y)` is sampled at `(x + 0.5, y + 0.5)` in the same coordinates as
/// `cx`, `cy`.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major 4x4.
    pub world_to_camera: [[f64; 4]; 4],
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        world_to_camera: [[f64; 4]; 4],
    ) -> Result<Self> {
        let cam = Self { fx, fy, cx, cy, width, height, world_to_camera };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`, with image `y` pointing along world `-up`.
    pub fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        fx: f64,
        fy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        let cross = |a: [f64; 3], b: [f64; 3]| {
            [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
        };
        let norm = |a: [f64; 3]| {
            let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
            [a[0] / n, a[1] / n, a[2] / n]
        };
        let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        let z = norm(sub(target, eye));
        let x = norm(cross(z, up));
        let y = cross(z, x);
        let w2c = [
            [x[0], x[1], x[2], -dot(x, eye)],
            [y[0], y[1], y[2], -dot(y, eye)],
            [z[0], z[1], z[2], -dot(z, eye)],
            [0.0, 0.0, 0.0, 1.0],
        ];
        Self::new(fx, fy, width as f64 / 2.0, height as f64 / 2.0, width, height, w2c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(Error::Parameter(format!("focal lengths must be positive, got fx={} fy={}", self.fx, self.fy)));
        }
        if !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::Parameter("principal point must be finite".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Parameter(format!("image size must be positive, got {}x{}", self.width, self.height)));
        }
        let m = &self.world_to_camera;
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("world_to_camera has non-finite entries".into()));
        }
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| m[i][k] * m[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (d - want).abs() > 1e-5 {
                    return Err(Error::Parameter("world_to_camera rotation block is not orthonormal".into()));
                }
            }
        }
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::Parameter("world_to_camera last row must be [0, 0, 0, 1]".into()));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Applies the rigid transform to a world point.
    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.world_to_camera;
        [0, 1, 2].map(|r| m[r][0] * p[0] + m[r][1] * p[1] + m[r][2] * p[2] + m[r][3])
    }
}

/// A camera plus the files holding its training targets.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub camera: Camera,
    pub image_path: Option<PathBuf>,
    /// model name -> single-view M3FT file
    pub feature_paths: std::collections::BTreeMap<String, PathBuf>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout6() -> QueryLayout {
        QueryLayout::from_degrees([("clip", 4), ("dino", 2)]).unwrap()
    }

    fn roundtrip(scene: &GaussianScene) -> GaussianScene {
        let mut buf = Vec::new();
        scene.write_to(&mut buf).unwrap();
        GaussianScene::read_from(&mut buf.as_slice()).unwrap()
    }

    #[test]
    fn single_primitive_roundtrip() {
        let mut scene = init_scene_from_points(&[([0.0; 3], [1.0; 3])], layout6()).unwrap();
        scene.primitives[0].query = vec![1.0, -2.0, 3.5, 0.0, 1e-9, -7.25];
        let back = roundtrip(&scene);
        assert_eq!(back.len(), 1);
        assert_eq!(back.query_len(), 6);
        assert_eq!(back, scene);
    }

    #[test]
    fn zero_primitives_rejected_on_save_and_load() {
        let scene = GaussianScene { primitives: vec![], layout: QueryLayout::empty() };
        let mut buf = Vec::new();
        assert!(matches!(scene.write_to(&mut buf), Err(Error::EmptyScene)));
        assert!(buf.is_empty());

        let mut raw = Vec::new();
        binio::write_header(&mut raw, SCENE_MAGIC).unwrap();
        binio::write_u32(&mut raw, 0).unwrap();
        binio::write_u32(&mut raw, 0).unwrap();
        binio::write_u32(&mut raw, 0).unwrap();
        let err = GaussianScene::read_from(&mut raw.as_slice()).unwrap_err();
        assert_eq!(err.to_string(), "empty scene");
    }

    #[test]
    fn bad_magic_and_version() {
        let scene = init_scene_from_points(&[([0.0; 3], [1.0; 3])], layout6()).unwrap();
        let mut buf = Vec::new();
        scene.write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(GaussianScene::read_from(&mut bad.as_slice()), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(GaussianScene::read_from(&mut bad.as_slice()), Err(Error::Format(_))));
        let truncated = &buf[..buf.len() - 5];
        assert!(matches!(GaussianScene::read_from(&mut &truncated[..]), Err(Error::Format(_))));
    }

    #[test]
    fn header_l_must_match_slices() {
        let scene = init_scene_from_points(&[([0.0; 3], [1.0; 3])], layout6()).unwrap();
        let mut buf = Vec::new();
        scene.write_to(&mut buf).unwrap();
        // declare l = 5 while records hold 6 query values: slices no longer line up
        buf[12] = 5;
        let err = GaussianScene::read_from(&mut buf.as_slice()).unwrap_err();
        assert!(matches!(err, Error::Dimension(_) | Error::Format(_)), "{err}");
    }

    #[test]
    fn layout_partition_checks() {
        assert!(QueryLayout::new(vec![
            ModelSlice { name: "a".into(), start: 0, len: 2 },
            ModelSlice { name: "b".into(), start: 3, len: 2 },
        ])
        .is_err());
        assert!(QueryLayout::new(vec![
            ModelSlice { name: "a".into(), start: 0, len: 2 },
            ModelSlice { name: "b".into(), start: 1, len: 2 },
        ])
        .is_err());
        assert!(QueryLayout::new(vec![
            ModelSlice { name: "a".into(), start: 0, len: 2 },
            ModelSlice { name: "a".into(), start: 2, len: 2 },
        ])
        .is_err());
        let ok = QueryLayout::new(vec![
            ModelSlice { name: "b".into(), start: 2, len: 3 },
            ModelSlice { name: "a".into(), start: 0, len: 2 },
        ])
        .unwrap();
        assert_eq!(ok.query_len(), 5);
        assert_eq!(ok.get("b").unwrap().range(), 2..5);
    }

    #[test]
    fn init_single_point() {
        let scene = init_scene_from_points(&[([0.0; 3], [1.0; 3])], QueryLayout::empty()).unwrap();
        let p = &scene.primitives[0];
        assert_eq!(p.centroid, [0.0; 3]);
        assert_eq!(p.rotation, [1.0, 0.0, 0.0, 0.0]);
        assert!((p.opacity() - 0.1).abs() < 1e-7);
    }

    #[test]
    fn init_two_points_nearest_neighbor_scale() {
        let pts = [([0.0, 0.0, 0.0], [1.0; 3]), ([0.0, 2.0, 0.0], [0.0; 3])];
        let scene = init_scene_from_points(&pts, layout6()).unwrap();
        for p in &scene.primitives {
            for s in p.scale() {
                assert!((s - 2.0).abs() < 1e-6, "{s}");
            }
            assert!(p.query.iter().all(|&q| q == 0.0));
        }
    }

    #[test]
    fn init_empty_rejected() {
        assert!(init_scene_from_points(&[], QueryLayout::empty()).is_err());
    }

    #[test]
    fn quaternion_normalization() {
        let mut p = init_scene_from_points(&[([0.0; 3], [1.0; 3])], QueryLayout::empty()).unwrap().primitives.remove(0);
        p.rotation = [3.0, -1.0, 2.0, 0.5];
        p.normalize_rotation();
        let n: f64 = p.rotation.iter().map(|&c| (c as f64).powi(2)).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }

    #[test]
    fn camera_validation() {
        let id = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
        assert!(Camera::new(10.0, 10.0, 4.0, 4.0, 8, 8, id).is_ok());
        assert!(Camera::new(0.0, 10.0, 4.0, 4.0, 8, 8, id).is_err());
        assert!(Camera::new(10.0, 10.0, 4.0, 4.0, 0, 8, id).is_err());
        let mut skew = id;
        skew[0][1] = 0.1;
        assert!(Camera::new(10.0, 10.0, 4.0, 4.0, 8, 8, skew).is_err());
        let cam = Camera::look_at([1.0, 2.0, -5.0], [0.0; 3], [0.0, 1.0, 0.0], 10.0, 10.0, 8, 8).unwrap();
        let c = cam.to_camera([0.0; 3]);
        assert!(c[0].abs() < 1e-12 && c[1].abs() < 1e-12 && c[2] > 0.0);
    }
}
