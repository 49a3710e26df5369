//! Feature-distance, image-quality, retrieval and grounding metrics.

mod features;
mod grounding;
mod image;
mod retrieval;

pub use features::{cosine_l2_maps, FeatureDistances};
pub use grounding::{average_precision, grounding_scores, mask_iou, GroundingScores, GroundingSet};
pub use image::{gaussian_window, psnr, ssim, ssim_with_grad, PSNR_CAP, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
pub use retrieval::{pool_feature_map, retrieval_at_k, Pooling, RetrievalScores, RetrievalSet};

/// Cosine similarity with the norm product floored at `1e-8`.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    ab / (aa * bb).sqrt().max(1e-8)
}
