use std::path::Path;
use std::time::{Duration, Instant};

use crate::data::SketchImage;
use crate::geometry::{check_watertight, GeometryError, Mesh};
use crate::image::GrayImage;
use crate::networks::Model;

use super::checkpoint::{sha256_hex, Checkpoint};
use super::TrainError;

/// A loaded model for inference. Parameters never change after load.
#[derive(Debug, Clone)]
pub struct InferenceSession {
    model: Model,
    checkpoint_id: String,
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub mesh: Mesh,
    pub elapsed: Duration,
}

impl InferenceSession {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        let ckpt = Checkpoint::from_bytes(bytes)?;
        Ok(Self {
            model: ckpt.model()?,
            checkpoint_id: sha256_hex(bytes),
        })
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let bytes =
            std::fs::read(path).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_model(model: Model, checkpoint_id: impl Into<String>) -> Self {
        Self {
            model,
            checkpoint_id: checkpoint_id.into(),
        }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// SHA-256 of the checkpoint archive.
    pub fn checkpoint_id(&self) -> &str {
        &self.checkpoint_id
    }

    pub fn resolution(&self) -> usize {
        self.model.cfg.resolution
    }

    /// Resamples a grayscale image to the model resolution and binarizes it.
    pub fn sketch_from_image(&self, img: &GrayImage) -> Result<SketchImage, TrainError> {
        Ok(SketchImage::from_image(img, self.resolution())?)
    }

    /// Sketch to watertight mesh.
    pub fn infer(&self, sketch: &SketchImage) -> Result<Inference, TrainError> {
        let start = Instant::now();
        let sketch = if sketch.resolution() == self.resolution() {
            sketch.clone()
        } else {
            SketchImage::from_image(&sketch.to_image(), self.resolution())?
        };
        if sketch.stroke_count() == 0 {
            return Err(TrainError::Data(crate::data::DataError::EmptySketch));
        }
        let mesh = self.model.infer(&sketch.to_tensor())?;
        let report = check_watertight(&mesh)?;
        if !report.is_watertight {
            return Err(GeometryError::NotWatertight {
                bad_edges: report.bad_edges.len(),
            }
            .into());
        }
        Ok(Inference {
            mesh,
            elapsed: start.elapsed(),
        })
    }
}
