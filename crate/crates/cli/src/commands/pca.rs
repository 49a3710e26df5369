use std::path::Path;

use m3_core::feature::FeatureTensor;

use crate::config::check_exists;
use crate::error::{config_err, CliResult};
use crate::imageio::write_rgb;
use crate::pca::pca_visualize;

pub fn run(input: &Path, view: usize, output: &Path) -> CliResult<()> {
    check_exists(input, "input")?;
    let tensor = FeatureTensor::load(input)?;
    if view >= tensor.n_views {
        return Err(config_err(format!("view {view} but {} holds {} views", input.display(), tensor.n_views)));
    }
    let image = pca_visualize(&tensor.view_map(view))?;
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        super::create_out_dir(parent)?;
    }
    write_rgb(output, &image)
}
