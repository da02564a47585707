use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{extract_features, FeatureMap};
use super::head::ToyHead;
use super::optim::{lr_schedule, validate_milestones, AdamW, AdamWConfig};
use super::{Detector, ModelSpec};
use crate::assignment::{assign_plus, assign_yowo_baseline, AssignmentMap, GroundTruth};
use crate::data::SyntheticClip;
use crate::error::{Error, Result};
use crate::loss::{total_loss, LossBreakdown, LossConfig};

/// Label assignment rule used during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Assigner {
    /// Every anchor whose shape IoU exceeds the threshold.
    #[default]
    Plus,
    /// The single best decoded prediction.
    Yowo,
}

impl std::str::FromStr for Assigner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plus" => Ok(Assigner::Plus),
            "yowo" => Ok(Assigner::Yowo),
            other => Err(Error::invalid(format!("unknown assigner `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub milestones: Vec<usize>,
    pub seed: u64,
    pub assigner: Assigner,
    pub assign_threshold: f64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 8,
            optimizer: AdamWConfig::default(),
            milestones: vec![1, 2, 3, 4],
            seed: 42,
            assigner: Assigner::Plus,
            assign_threshold: 0.5,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.optimizer.lr >= 0.0 && self.optimizer.lr.is_finite()) {
            return Err(Error::invalid(
                "learning rate must be finite and non-negative",
            ));
        }
        validate_milestones(&self.milestones)?;
        self.loss.weights.validate()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub conf_act: f64,
    pub conf_noact: f64,
    pub cls: f64,
    pub coord: f64,
    pub total: f64,
    pub positives: usize,
    pub ground_truths: usize,
    pub collisions: usize,
    pub dropped: usize,
}

impl StepRecord {
    fn new(step: u64, epoch: usize, lr: f64, b: &LossBreakdown, maps: &[AssignmentMap]) -> Self {
        StepRecord {
            step,
            epoch,
            lr,
            conf_act: b.conf_act,
            conf_noact: b.conf_noact,
            cls: b.cls,
            coord: b.coord,
            total: b.total,
            positives: b.positives,
            ground_truths: b.ground_truths,
            collisions: maps.iter().map(|m| m.collisions()).sum(),
            dropped: maps.iter().map(|m| m.dropped()).sum(),
        }
    }
}

pub struct TrainOutcome {
    pub detector: Detector,
    pub optimizer: AdamW,
}

/// A keyframe ready for training: its features and ground truths.
pub struct Sample {
    pub features: FeatureMap,
    pub gts: Vec<GroundTruth>,
}

/// One sample per frame of every clip; each frame is the keyframe of the
/// window of `spec.clip_len` frames ending at it.
pub fn build_samples(spec: &ModelSpec, clips: &[SyntheticClip]) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for clip in clips {
        for t in 0..clip.num_frames() {
            let window = clip.window(t, spec.clip_len)?;
            out.push(Sample {
                features: extract_features(&window, &spec.grid)?,
                gts: clip.ground_truths(t),
            });
        }
    }
    Ok(out)
}

pub fn assign(
    assigner: Assigner,
    threshold: f64,
    detector: &Detector,
    gts: &[GroundTruth],
    preds: &crate::model::PredictionGrid,
) -> Result<AssignmentMap> {
    let spec = &detector.spec;
    match assigner {
        Assigner::Plus => assign_plus(gts, &spec.anchors, &spec.grid, threshold),
        Assigner::Yowo => assign_yowo_baseline(gts, preds, &spec.anchors, &spec.grid),
    }
}

/// Loss and parameter gradient of the detector on a batch.
pub fn batch_gradient(
    detector: &Detector,
    config: &TrainConfig,
    batch: &[&Sample],
) -> Result<(LossBreakdown, Vec<AssignmentMap>, Vec<f64>)> {
    let mut preds = Vec::with_capacity(batch.len());
    let mut maps = Vec::with_capacity(batch.len());
    for s in batch {
        let p = detector.head.forward(&s.features)?;
        maps.push(assign(
            config.assigner,
            config.assign_threshold,
            detector,
            &s.gts,
            &p,
        )?);
        preds.push(p);
    }
    let spec = &detector.spec;
    let breakdown = total_loss(&preds, &maps, &spec.anchors, spec.grid.stride, &config.loss)?;
    let mut grad = vec![0.0; detector.head.params().len()];
    for (s, g) in batch.iter().zip(&breakdown.gradients) {
        detector.head.backward(&s.features, g, &mut grad)?;
    }
    Ok((breakdown, maps, grad))
}

/// Minibatch training: extract, forward, assign, loss, AdamW. Samples are
/// reshuffled every epoch from a generator seeded with `config.seed`; the
/// whole run is deterministic. `log` receives one record per step.
pub fn train(
    spec: ModelSpec,
    config: &TrainConfig,
    clips: &[SyntheticClip],
    mut log: impl FnMut(&StepRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    spec.validate()?;
    if clips.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let samples = build_samples(&spec, clips)?;
    let head = ToyHead::new(spec.feature_dim(), spec.shape(), config.seed);
    let mut detector = Detector { spec, head };
    let mut optimizer = AdamW::new(config.optimizer, detector.head.params().len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 0..config.epochs {
        let lr = lr_schedule(epoch, config.optimizer.lr, &config.milestones);
        optimizer.set_lr(lr);
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (breakdown, maps, grad) = batch_gradient(&detector, config, &batch)?;
            let record = StepRecord::new(optimizer.step + 1, epoch, lr, &breakdown, &maps);
            if !breakdown.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss diverged: {}",
                    serde_json::to_string(&record).unwrap_or_default()
                )));
            }
            optimizer.step(detector.head.params_mut(), &grad)?;
            log(&record)?;
        }
    }
    Ok(TrainOutcome {
        detector,
        optimizer,
    })
}
