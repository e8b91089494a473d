//! Cameras and the differentiable soft silhouette renderer.

mod camera;
mod raster;

pub use camera::{
    canonical_pose, project, project_var, sample_pose, sample_poses, CameraPose, Projected,
    Projection, AZIMUTH_RANGE, D0, ELEVATION_RANGE, VIEW_HALF_EXTENT,
};
pub use raster::{
    hard_mask, pixel_center, rasterize_var, render_mask, soft_silhouette, soft_silhouette_var,
    RenderConfig, Silhouette, DEFAULT_SIGMA, HARD_SIGMA,
};

use thiserror::Error;

use crate::autodiff::TensorError;
use crate::image::ImageError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("invalid camera pose {0:?}")]
    InvalidPose(CameraPose),
    #[error("invalid render config: {0}")]
    InvalidConfig(String),
    #[error("vertex {vertex} is behind the camera")]
    BehindCamera { vertex: usize },
    #[error("non-finite vertex coordinates")]
    NonFinite,
    #[error("silhouette values must lie in [0, 1]")]
    OutOfRange,
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
