//! Differentiable splatting of colors and principal queries.
//!
//! Every channel, RGB or query, is composited front to back with the same
//! per-pixel weights `a_i T_i`, `T_i = prod_{j<i} (1 - a_j)`. Fragments are sorted
//! once per view by camera depth (ties by primitive index) and binned into
//! 16x16 tiles; tiles are rendered in parallel and each pixel sums in sorted
//! order, so results do not depend on the worker count.

mod backward;
mod composite;
mod project;
mod render;

pub use backward::{backward_render, PrimitiveGrads, RenderGrads};
pub use composite::{composite_pixel, Layer};
pub use project::{project, SplatFragment};
pub use render::{render_view, Channels, PreparedView, RenderOutput, TraceEntry};

/// Fragments at or closer than this camera depth are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Isotropic screen-space dilation added to every projected covariance, in px^2.
pub const LOW_PASS: f64 = 0.3;
pub const ALPHA_MAX: f64 = 0.99;
/// Per-pixel alphas below this are skipped.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Compositing stops once transmittance falls below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
pub const TILE_SIZE: usize = 16;
/// Half-extent of the screen-space footprint in standard deviations. At 3.5 sigma
/// the Gaussian falls below `ALPHA_MIN`, so the footprint never clips a visible alpha.
pub const EXTENT_SIGMAS: f64 = 3.5;
