//! Optimisation loop, checkpoints, evaluation and the robustness and
//! ablation studies.

mod checkpoint;
mod config;
mod eval;
mod optim;
mod session;
mod trainer;

use thiserror::Error;

pub use checkpoint::{sha256_hex, Checkpoint};
pub use config::TrainConfig;
pub use eval::{
    ablate, eval_poses, evaluate, evaluate_with, mask_iou, robustness_eval, score_mesh,
    AblationReport, AblationRun, CategoryResult, EvalReport, LevelReport, SampleResult, Variant,
    EVAL_HALF_EXTENT, EVAL_VIEWS, EVAL_VOXEL_RESOLUTION, ROBUSTNESS_LEVELS,
};
pub use optim::{lr_at, Adam};
pub use session::{Inference, InferenceSession};
pub use trainer::{
    batch_indices, param_subset, step_poses, Trainer, DISCRIMINATOR_PREFIX, GENERATOR_PREFIXES,
};

use crate::autodiff::TensorError;
use crate::data::DataError;
use crate::geometry::GeometryError;
use crate::losses::LossError;
use crate::networks::NetworkError;
use crate::render::RenderError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
