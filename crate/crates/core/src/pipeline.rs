//! Full rendering path: splat query slices, then attend over each model's bank.

use std::ops::Range;

use crate::attention::{attend, Temperature};
use crate::bank::MemoryBank;
use crate::error::{Error, Result};
use crate::feature::PixelMap;
use crate::raster::{Channels, PreparedView};
use crate::scene::{Camera, GaussianScene};

/// Query channels of `bank`'s model, checked against its degree.
pub fn model_range(scene: &GaussianScene, bank: &MemoryBank) -> Result<Range<usize>> {
    let slice = scene
        .layout
        .get(&bank.model_name)
        .ok_or_else(|| Error::Config(format!("scene has no query slice for model '{}'", bank.model_name)))?;
    if slice.len != bank.degree {
        return Err(Error::Config(format!(
            "model '{}' has {} query channels in the scene but degree {} in its bank",
            bank.model_name, slice.len, bank.degree
        )));
    }
    Ok(slice.range())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub rgb: PixelMap,
    pub alpha: PixelMap,
    /// One `h x w x d` map per bank, in bank order.
    pub features: Vec<(String, PixelMap)>,
}

/// Renders RGB and every bank's feature map for one view.
pub fn render_all(
    scene: &GaussianScene,
    camera: &Camera,
    banks: &[MemoryBank],
    temperature: Temperature,
) -> Result<RenderedView> {
    let view = PreparedView::new(scene, camera);
    let channels = if scene.query_len() > 0 { Channels::rgb_and_query(0..scene.query_len()) } else { Channels::rgb() };
    let out = view.render(scene, &channels)?;
    let mut features = Vec::with_capacity(banks.len());
    for bank in banks {
        let range = model_range(scene, bank)?;
        let queries = out.query_map.as_ref().expect("queries rendered").slice_channels(range);
        features.push((bank.model_name.clone(), attend(&queries, bank, temperature, false)?.features));
    }
    Ok(RenderedView { rgb: out.rgb.expect("rgb rendered"), alpha: out.alpha_map, features })
}
