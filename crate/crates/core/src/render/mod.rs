//! Deterministic CPU tile rasterizer for 3D Gaussians.
//!
//! Two projections feed the same compositor: a pinhole camera (used for
//! training against the captured images) and an orthographic nadir view
//! (used to produce the orthophoto). Splats are sorted by a depth key,
//! binned into 16×16 pixel tiles and alpha-blended front to back per pixel.
//! [`backward`] differentiates the blend and both projections analytically.

mod backward;
mod composite;
mod project;

pub use backward::{backward, GaussianGrad};
pub use composite::{composite, RenderContext, RenderOutput};
pub use project::{
    ortho_cov, ortho_matrix, project_splats_ortho, project_splats_perspective, OrthoViewBox, ProjectedSplat,
    SplatGeometry, UpAxis,
};

use crate::field::GaussianField;
use crate::raster::Rgb;
use crate::scene::{CameraIntrinsics, FramePose};

/// Constants of the blend, shared by forward and backward passes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RasterConfig {
    /// Added to every 2D covariance diagonal, px².
    pub dilation: f64,
    /// Per-splat alpha below which a splat is skipped at a pixel.
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Blending stops once transmittance drops below this.
    pub transmittance_min: f64,
    pub tile_size: usize,
    /// Perspective splats closer than this camera depth are dropped.
    pub near: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        RasterConfig {
            dilation: 0.3,
            alpha_min: 1.0 / 255.0,
            alpha_max: 0.99,
            transmittance_min: 1e-4,
            tile_size: 16,
            near: 0.01,
        }
    }
}

/// A 2D Gaussian footprint ready for compositing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat2D {
    pub center: [f64; 2],
    /// Symmetric 2D covariance `[[xx, xy], [xy, yy]]`, px², dilation included.
    pub cov2d: [[f64; 2]; 2],
    pub depth_key: f64,
    pub opacity: f64,
    pub color: Rgb,
}

/// Where a field is rendered from.
#[derive(Clone, Debug)]
pub enum View {
    Perspective {
        pose: FramePose,
        intrinsics: CameraIntrinsics,
    },
    Ortho {
        view_box: OrthoViewBox,
        width: usize,
        height: usize,
    },
}

impl View {
    pub fn size(&self) -> (usize, usize) {
        match self {
            View::Perspective { intrinsics, .. } => (intrinsics.width, intrinsics.height),
            View::Ortho { width, height, .. } => (*width, *height),
        }
    }

    pub fn project(&self, field: &GaussianField, cfg: &RasterConfig) -> Vec<ProjectedSplat> {
        match self {
            View::Perspective { pose, intrinsics } => project_splats_perspective(field, pose, intrinsics, cfg),
            View::Ortho {
                view_box,
                width,
                height,
            } => project_splats_ortho(field, view_box, *width, *height, cfg),
        }
    }
}

/// Projects and composites `field` as seen from `view`.
pub fn render(field: &GaussianField, view: &View, background: Rgb, cfg: &RasterConfig) -> (RenderOutput, RenderContext) {
    let (w, h) = view.size();
    composite(view.project(field, cfg), w, h, background, cfg)
}
