//! Two-phase optimization: appearance first, then principal queries and
//! memory projections against ground-truth features.

mod appearance;
mod config;
mod loss;
mod memory;
mod report;

pub use appearance::{fit_appearance, AppearanceView};
pub use config::TrainConfig;
pub use loss::{image_loss, paired_rows_loss, point_feature_loss, sample_pixels, LossWeights, COSINE_EPS};
pub use memory::{evaluate_features, fit_memory, FeatureView};
pub use report::{LossRecord, TrainReport};
