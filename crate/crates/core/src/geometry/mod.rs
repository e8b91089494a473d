//! Meshes, icosphere templates, smoothness regularizers, voxel evaluation and
//! export.

mod icosphere;
pub mod io;
mod mesh;
mod regularize;
mod voxel;

pub use icosphere::{icosahedron, icosphere, icosphere_tensor, Subdivision, MAX_LEVEL};
pub use io::{export_mesh, parse_obj, MeshFormat};
pub use mesh::{check_watertight, Mesh, WatertightReport};
pub use regularize::{flatten_loss, laplacian_loss, RegularizerTopology};
pub use voxel::{voxel_iou, voxelize, voxelize_in, Aabb, VoxelGrid};

use thiserror::Error;

use crate::autodiff::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("face {face} references vertex {index} but the mesh has {vertices} vertices")]
    IndexOutOfRange {
        face: usize,
        index: u32,
        vertices: usize,
    },
    #[error("icosphere level {0} outside 0..=5")]
    LevelOutOfRange(u32),
    #[error("mesh is not watertight ({bad_edges} bad edges)")]
    NotWatertight { bad_edges: usize },
    #[error("vertex {0} has no neighbours")]
    IsolatedVertex(usize),
    #[error("edge {edge:?} is shared by {faces} faces")]
    NonManifoldEdge { edge: [u32; 2], faces: usize },
    #[error("voxel resolution {0} outside 8..=128")]
    ResolutionOutOfRange(usize),
    #[error("voxel grids differ in resolution ({0} vs {1})")]
    ResolutionMismatch(usize, usize),
    #[error("voxel grids do not share bounds")]
    BoundsMismatch,
    #[error("voxelization bounds have zero or non-finite extent")]
    DegenerateBounds,
    #[error("odd ray-crossing count in column {column:?}")]
    ParityError { column: [usize; 2] },
    #[error("mesh has non-finite vertex coordinates")]
    NonFinite,
    #[error("expected [{expected}, 3] vertices, got {shape:?}")]
    VertexShape { expected: usize, shape: Vec<usize> },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
