//! Run configuration: a sectioned TOML file where every key is optional and
//! unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use stadkit::assignment::GridSpec;
use stadkit::data::{ClipParams, DatasetParams, MotionProfile};
use stadkit::eval::TubeLinkConfig;
use stadkit::geometry::AnchorSet;
use stadkit::loss::{ConfidenceTarget, LossConfig, LossWeights, RegressionLoss};
use stadkit::model::{AdamWConfig, Assigner, ModelSpec, TrainConfig};

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub data: DataSection,
    pub model: ModelSection,
    pub loss: LossSection,
    pub assign: AssignSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub bench: BenchSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub seed: u64,
    pub train_videos: usize,
    pub test_videos: usize,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub classes: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub motion: MotionProfile,
}

impl Default for DataSection {
    fn default() -> Self {
        let d = DatasetParams::default();
        DataSection {
            seed: d.seed,
            train_videos: d.train_videos,
            test_videos: d.test_videos,
            width: d.clip.width,
            height: d.clip.height,
            frames: d.clip.frames,
            classes: d.clip.classes,
            min_objects: d.clip.min_objects,
            max_objects: d.clip.max_objects,
            motion: d.clip.motion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub grid_size: usize,
    pub stride: usize,
    pub anchors: AnchorSet,
    pub clip_len: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            grid_size: 7,
            stride: 32,
            anchors: AnchorSet::default_set(),
            clip_len: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub lambda_act: f64,
    pub lambda_noact: f64,
    pub lambda_cls: f64,
    pub lambda_coord: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub regression: RegressionLoss,
    pub confidence_target: ConfidenceTarget,
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        let c = LossConfig::default();
        LossSection {
            lambda_act: w.lambda_act,
            lambda_noact: w.lambda_noact,
            lambda_cls: w.lambda_cls,
            lambda_coord: w.lambda_coord,
            focal_gamma: w.focal_gamma,
            focal_alpha: w.focal_alpha,
            regression: c.regression,
            confidence_target: c.confidence_target,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssignSection {
    pub assigner: Assigner,
    pub threshold: f64,
}

impl Default for AssignSection {
    fn default() -> Self {
        AssignSection {
            assigner: Assigner::Plus,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub milestones: Vec<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let o = AdamWConfig::default();
        TrainSection {
            seed: t.seed,
            epochs: t.epochs,
            batch_size: t.batch_size,
            // the toy head starts near zero and stays underfit at 1e-4
            lr: 1e-2,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            weight_decay: o.weight_decay,
            milestones: t.milestones,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    FrameMap,
    VideoMap,
    #[default]
    Both,
}

impl Metric {
    pub fn frame(self) -> bool {
        self != Metric::VideoMap
    }

    pub fn video(self) -> bool {
        self != Metric::FrameMap
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub metric: Metric,
    pub conf_threshold: f64,
    pub nms_iou: f64,
    /// Box IoU for frame AP.
    pub iou_threshold: f64,
    /// Tube IoU for video AP.
    pub video_iou_threshold: f64,
    pub link_iou: f64,
    pub max_gap: usize,
    /// Score cut for the written detection list; AP uses `conf_threshold`.
    pub demo_threshold: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        let link = TubeLinkConfig::default();
        EvalSection {
            metric: Metric::Both,
            conf_threshold: 0.005,
            nms_iou: 0.5,
            iou_threshold: 0.5,
            video_iou_threshold: 0.5,
            link_iou: link.link_iou,
            max_gap: link.max_gap,
            demo_threshold: 0.3,
        }
    }
}

impl EvalSection {
    pub fn link(&self) -> TubeLinkConfig {
        TubeLinkConfig {
            link_iou: self.link_iou,
            max_gap: self.max_gap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub warmup: usize,
    pub iters: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            warmup: 2,
            iters: 10,
        }
    }
}

impl Config {
    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| Failure::config(format!("invalid config {}: {e}", path.display())))
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self, Failure> {
        serde_json::from_value(value.clone())
            .map_err(|e| Failure::config(format!("unreadable embedded config: {e}")))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let input = self.model.grid_size * self.model.stride;
        if self.data.width != input || self.data.height != input {
            return Err(Failure::config(format!(
                "frame size {}x{} must equal grid_size * stride = {input}",
                self.data.width, self.data.height
            )));
        }
        self.dataset_params()
            .clip
            .validate()
            .map_err(Failure::config)?;
        self.model_spec().validate().map_err(Failure::config)?;
        self.train_config().validate().map_err(Failure::config)?;
        let e = &self.eval;
        for (name, v) in [
            ("conf_threshold", e.conf_threshold),
            ("iou_threshold", e.iou_threshold),
            ("demo_threshold", e.demo_threshold),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Failure::config(format!("eval.{name} = {v} outside [0, 1)")));
            }
        }
        if !(0.0..1.0).contains(&e.video_iou_threshold) {
            return Err(Failure::config(format!(
                "eval.video_iou_threshold = {} outside [0, 1)",
                e.video_iou_threshold
            )));
        }
        if !(e.nms_iou > 0.0 && e.nms_iou <= 1.0) || !(e.link_iou > 0.0 && e.link_iou <= 1.0) {
            return Err(Failure::config(
                "eval.nms_iou and eval.link_iou must lie in (0, 1]",
            ));
        }
        if self.bench.iters == 0 {
            return Err(Failure::config("bench.iters must be at least 1"));
        }
        Ok(())
    }

    pub fn dataset_params(&self) -> DatasetParams {
        let d = &self.data;
        DatasetParams {
            seed: d.seed,
            train_videos: d.train_videos,
            test_videos: d.test_videos,
            clip: ClipParams {
                width: d.width,
                height: d.height,
                frames: d.frames,
                classes: d.classes,
                min_objects: d.min_objects,
                max_objects: d.max_objects,
                cell_size: self.model.stride,
                motion: d.motion,
            },
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            grid: GridSpec::new(self.model.grid_size, self.model.stride, self.data.classes),
            anchors: self.model.anchors.clone(),
            clip_len: self.model.clip_len,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        let l = &self.loss;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            optimizer: AdamWConfig {
                lr: t.lr,
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
                weight_decay: t.weight_decay,
            },
            milestones: t.milestones.clone(),
            seed: t.seed,
            assigner: self.assign.assigner,
            assign_threshold: self.assign.threshold,
            loss: LossConfig {
                weights: LossWeights {
                    lambda_act: l.lambda_act,
                    lambda_noact: l.lambda_noact,
                    lambda_cls: l.lambda_cls,
                    lambda_coord: l.lambda_coord,
                    focal_gamma: l.focal_gamma,
                    focal_alpha: l.focal_alpha,
                },
                regression: l.regression,
                confidence_target: l.confidence_target,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        let c: Config = toml::from_str("").unwrap();
        assert_eq!(c, Config::default());
        c.validate().unwrap();
    }

    #[test]
    fn unknown_key_is_named() {
        let err = toml::from_str::<Config>("[train]\nlearning_rate = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("learning_rate"));
        assert!(toml::from_str::<Config>("[nonsense]\n").is_err());
    }

    #[test]
    fn partial_sections_and_integer_anchors() {
        let c: Config = toml::from_str(
            "[model]\nanchors = [[32, 32], [64, 64]]\n[assign]\nassigner = \"yowo\"\n[loss]\nregression = \"smooth-l1\"\n",
        )
        .unwrap();
        assert_eq!(c.model.anchors.len(), 2);
        assert_eq!(c.model.grid_size, 7);
        assert_eq!(c.assign.assigner, Assigner::Yowo);
        assert_eq!(c.loss.regression, RegressionLoss::SmoothL1);
    }

    #[test]
    fn json_round_trip() {
        let c = Config::default();
        assert_eq!(Config::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn frame_size_must_match_grid() {
        let mut c = Config::default();
        c.data.width = 200;
        assert!(c.validate().is_err());
    }
}
