//! CPU alpha-compositing rasterizer.
//!
//! Splats are sorted globally by camera-space depth and composited front to
//! back per pixel; there is no tiling. Pixel `(x, y)` is sampled at the
//! integer coordinate `(x, y)`.

mod backward;
mod forward;
pub mod image;
mod project;

pub use backward::{render_backward, render_backward_with, GradOutput};
pub use forward::{render, render_trace, render_with, Contribution, RenderOutput};
pub use image::{psnr, save_gray_png, save_index_png, Image, PSNR_CAP};
pub use project::{project, projection_jacobian, Splat2D, NEAR_PLANE};

/// Upper bound on a single splat's alpha.
pub const ALPHA_CAP: f64 = 0.99;
/// Alphas below this are treated as zero.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Added to the diagonal of every projected covariance, in pixels².
pub const COV2D_FLOOR: f64 = 0.3;
