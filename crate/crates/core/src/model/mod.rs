//! Toy differentiable detector: a fixed feature stub followed by a learnable
//! per-cell affine head, plus AdamW, the step schedule and the training loop.

mod checkpoint;
mod features;
mod head;
mod optim;
mod prediction;
mod train;

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use features::{extract_features, feature_dim, FeatureMap};
pub use head::ToyHead;
pub use optim::{lr_schedule, validate_milestones, AdamW, AdamWConfig};
pub use prediction::{GridShape, PredictionGrid, CLASS_OFFSET, CONF_INDEX};
pub use train::{
    assign, batch_gradient, build_samples, train, Assigner, Sample, StepRecord, TrainConfig,
    TrainOutcome,
};

use crate::assignment::GridSpec;
use crate::data::SyntheticClip;
use crate::error::{Error, Result};
use crate::geometry::AnchorSet;

/// Static description of a detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub grid: GridSpec,
    pub anchors: AnchorSet,
    /// Frames per input clip (`K`).
    pub clip_len: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid.size == 0 || self.grid.stride == 0 || self.grid.classes == 0 {
            return Err(Error::invalid(
                "grid size, stride and classes must be positive",
            ));
        }
        if self.clip_len == 0 {
            return Err(Error::invalid("clip length must be positive"));
        }
        Ok(())
    }

    pub fn shape(&self) -> GridShape {
        self.grid.shape(self.anchors.len())
    }

    pub fn feature_dim(&self) -> usize {
        feature_dim(self.grid.classes)
    }
}

/// Feature stub plus head.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub spec: ModelSpec,
    pub head: ToyHead,
}

impl Detector {
    /// Raw predictions for the keyframe of `clip`.
    pub fn predict(&self, clip: &SyntheticClip) -> Result<PredictionGrid> {
        let features = extract_features(clip, &self.spec.grid)?;
        self.head.forward(&features)
    }

    /// Predictions for frame `t` of a full clip, using the window of
    /// `clip_len` frames ending at `t`.
    pub fn predict_frame(&self, clip: &SyntheticClip, t: usize) -> Result<PredictionGrid> {
        self.predict(&clip.window(t, self.spec.clip_len)?)
    }
}
