//! Procedural dataset: primitive meshes, their canonical silhouettes and
//! synthesized line sketches, plus the partial-sketch corruption used for
//! robustness studies.

mod dataset;
mod primitives;
mod sketch;

use thiserror::Error;

pub use dataset::{
    build_dataset, sample_seed, Dataset, DatasetConfig, ManifestRecord, Sample, Split,
    DEFAULT_RESOLUTION, MANIFEST_FILE, MAX_RESOLUTION,
};
pub use primitives::{generate_primitive, Category, Primitive, Solid, PRIMITIVE_LEVEL};
pub use sketch::{
    boundary_pixels, corrupt_sketch, sketch_from_mask, synthesize_sketch, Corruption,
    CorruptionSpec, Rect, SketchImage, BACKGROUND, MAX_CORRUPTION_ATTEMPTS, STROKE,
};

use crate::geometry::GeometryError;
use crate::image::ImageError;
use crate::render::RenderError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("primitive: {0}")]
    Primitive(String),
    #[error("invalid sketch: {0}")]
    InvalidSketch(String),
    #[error("sketch is not binary")]
    NonBinary,
    #[error("silhouette is empty")]
    EmptySilhouette,
    #[error("sketch has no stroke pixels")]
    EmptySketch,
    #[error("corruption range [{lo}, {hi}] must satisfy 0 < lo <= hi < 1")]
    InvalidCorruption { lo: f64, hi: f64 },
    #[error("no acceptable rectangle after {attempts} attempts")]
    NoAcceptableRectangle { attempts: usize },
    #[error("invalid dataset config: {0}")]
    InvalidConfig(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Render(#[from] RenderError),
}
