use super::{ALPHA_MAX, ALPHA_MIN, TRANSMITTANCE_MIN};

/// One depth-ordered contribution to a pixel.
#[derive(Debug, Clone, Copy)]
pub struct Layer<'a> {
    pub depth: f64,
    pub alpha: f64,
    pub payload: &'a [f64],
}

/// Front-to-back alpha compositing of arbitrary payload vectors.
///
/// Alphas are clamped to [`ALPHA_MAX`], layers below [`ALPHA_MIN`] are skipped
/// and compositing stops once transmittance drops under [`TRANSMITTANCE_MIN`].
/// Writes `sum p_i a_i T_i` into `out` and returns the transmittance left after
/// the last composited layer.
pub fn composite_pixel(layers: &[Layer<'_>], out: &mut [f64]) -> f64 {
    debug_assert!(layers.windows(2).all(|w| w[0].depth <= w[1].depth), "layers must be sorted by increasing depth");
    out.fill(0.0);
    let mut transmittance = 1.0;
    for layer in layers {
        if transmittance < TRANSMITTANCE_MIN {
            break;
        }
        if layer.alpha < ALPHA_MIN {
            continue;
        }
        debug_assert_eq!(layer.payload.len(), out.len());
        let alpha = layer.alpha.min(ALPHA_MAX);
        let weight = alpha * transmittance;
        for (o, p) in out.iter_mut().zip(layer.payload) {
            *o += p * weight;
        }
        transmittance *= 1.0 - alpha;
    }
    transmittance
}
