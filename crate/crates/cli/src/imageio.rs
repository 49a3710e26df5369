//! PNG reading and writing for RGB images, heatmaps and masks.

use std::path::Path;

use image::{GrayImage, ImageBuffer, RgbImage};
use m3_core::feature::PixelMap;

use crate::error::{data_err, CliResult};

/// Loads an 8-bit PNG as RGB in `[0, 1]`.
pub fn read_rgb(path: &Path) -> CliResult<PixelMap> {
    let img = image::open(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    Ok(PixelMap::from_data(h as usize, w as usize, 3, data)?)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a 3-channel map, clamped to `[0, 1]`.
pub fn write_rgb(path: &Path, map: &PixelMap) -> CliResult<()> {
    assert_eq!(map.channels, 3, "write_rgb expects three channels");
    let img: RgbImage =
        ImageBuffer::from_raw(map.width as u32, map.height as u32, map.data.iter().map(|&v| quantize(v)).collect())
            .expect("buffer matches image size");
    img.save(path).map_err(|e| data_err(format!("{}: {e}", path.display())))
}

/// Loads a mask; pixels brighter than mid-gray are inside.
pub fn read_mask(path: &Path) -> CliResult<(usize, usize, Vec<bool>)> {
    let img: GrayImage = image::open(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?.to_luma8();
    let (w, h) = img.dimensions();
    Ok((h as usize, w as usize, img.into_raw().into_iter().map(|v| v > 127).collect()))
}

pub fn write_mask(path: &Path, height: usize, width: usize, mask: &[bool]) -> CliResult<()> {
    let img: GrayImage =
        ImageBuffer::from_raw(width as u32, height as u32, mask.iter().map(|&m| if m { 255 } else { 0 }).collect())
            .expect("buffer matches image size");
    img.save(path).map_err(|e| data_err(format!("{}: {e}", path.display())))
}

/// Blends red into `rgb` by a per-pixel weight in `[0, 1]`.
pub fn red_overlay(rgb: &PixelMap, weight: &[f64]) -> PixelMap {
    let mut out = rgb.clone();
    for (p, &s) in weight.iter().enumerate() {
        let px = out.pixel_mut(p);
        let red = [1.0, 0.0, 0.0];
        for c in 0..3 {
            px[c] = (1.0 - s) * px[c] + s * red[c];
        }
    }
    out
}
