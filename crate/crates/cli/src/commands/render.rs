use m3_core::feature::FeatureTensor;
use m3_core::pipeline::render_all;

use super::{create_out_dir, load_scene, load_scene_banks, load_views, view_name};
use crate::config::RunConfig;
use crate::error::{config_err, CliResult};
use crate::imageio::write_rgb;
use crate::pca::pca_visualize;

/// Writes `render_XXX.png` and one `render_XXX_<model>.m3ft` per bank for the
/// chosen view, or every view; `pca` adds a false-color PNG per feature map.
pub fn run(cfg: &RunConfig, view: Option<usize>, pca: bool) -> CliResult<()> {
    let scene = load_scene(cfg)?;
    let views = load_views(cfg)?;
    let which: Vec<usize> = match view {
        Some(v) if v >= views.len() => {
            return Err(config_err(format!("view {v} but the manifest has {} views", views.len())))
        }
        Some(v) => vec![v],
        None => (0..views.len()).collect(),
    };
    let banks = load_scene_banks(cfg, &scene)?;
    let temperature = cfg.temperature();
    if pca {
        if let Some(b) = banks.iter().find(|b| b.dim < 3) {
            return Err(config_err(format!("PCA needs at least 3 channels, '{}' has {}", b.model_name, b.dim)));
        }
    }
    let out = cfg.out_dir();
    create_out_dir(&out)?;
    for i in which {
        let rendered = render_all(&scene, &views[i].camera, &banks, temperature)?;
        let name = view_name(i).replace("view", "render");
        write_rgb(&out.join(format!("{name}.png")), &rendered.rgb)?;
        for (model, map) in &rendered.features {
            FeatureTensor::from_maps(model.as_str(), std::slice::from_ref(map))?
                .save(out.join(format!("{name}_{model}.m3ft")))?;
            if pca {
                write_rgb(&out.join(format!("{name}_{model}_pca.png")), &pca_visualize(map)?)?;
            }
        }
        println!("{name}: {} feature map(s)", rendered.features.len());
    }
    Ok(())
}
