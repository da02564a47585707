use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::data::SyntheticClip;
use crate::error::{Error, Result};
use crate::model::{Detector, GridShape};
use crate::postprocess::{decode_grid, nms, Detection};

/// Inference chain: feature stub, head, decode, NMS.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub detector: Detector,
    pub conf_threshold: f64,
    pub nms_iou: f64,
}

impl Pipeline {
    /// Detections for frame `t` of `clip`.
    pub fn detect_frame(&self, clip: &SyntheticClip, t: usize) -> Result<Vec<Detection>> {
        let preds = self.detector.predict_frame(clip, t)?;
        let spec = &self.detector.spec;
        let raw = decode_grid(
            &preds,
            &spec.anchors,
            spec.grid.stride,
            self.conf_threshold,
            &clip.video_id,
            clip.first_frame + t,
        )?;
        nms(&raw, self.nms_iou)
    }

    /// Detections for every frame of `clip`, in frame order.
    pub fn detect_clip(&self, clip: &SyntheticClip) -> Result<Vec<Detection>> {
        let mut out = Vec::new();
        for t in 0..clip.num_frames() {
            out.extend(self.detect_frame(clip, t)?);
        }
        Ok(out)
    }
}

/// Analytic per-frame operation counts of the dense stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    /// Multiply-accumulates of the head: `S²·F·B(5+C)`.
    pub forward_macs: u64,
    /// Score evaluations in decoding: `S²·B·C`.
    pub decode_scores: u64,
}

impl OpCounts {
    pub fn for_shape(shape: GridShape, feature_dim: usize) -> Self {
        let cells = (shape.size * shape.size) as u64;
        OpCounts {
            forward_macs: cells * feature_dim as u64 * (shape.anchors * shape.channels()) as u64,
            decode_scores: cells * (shape.anchors * shape.classes) as u64,
        }
    }

    pub fn total(&self) -> u64 {
        self.forward_macs + self.decode_scores
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostInfo {
    pub os: String,
    pub arch: String,
    pub logical_cpus: usize,
    pub artifact_version: String,
}

impl HostInfo {
    pub fn current() -> Self {
        HostInfo {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            artifact_version: crate::VERSION.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub median_fps: f64,
    pub mean_fps: f64,
    pub iters: usize,
    pub warmup: usize,
    pub frames_per_iter: usize,
    /// Wall-clock seconds of each timed iteration.
    pub iter_seconds: Vec<f64>,
    pub ops_per_frame: OpCounts,
    pub host: HostInfo,
    pub timestamp_unix: u64,
}

/// Times `iters` passes over the keyframe of every clip after `warmup`
/// untimed passes. Runs on the calling thread.
pub fn bench_fps(
    pipeline: &Pipeline,
    clips: &[SyntheticClip],
    warmup: usize,
    iters: usize,
) -> Result<BenchReport> {
    if iters == 0 {
        return Err(Error::invalid("iters must be at least 1"));
    }
    if clips.is_empty() {
        return Err(Error::invalid("no clips to benchmark"));
    }
    let pass = || -> Result<usize> {
        let mut n = 0;
        for clip in clips {
            n += pipeline.detect_frame(clip, clip.num_frames() - 1)?.len();
        }
        Ok(n)
    };
    for _ in 0..warmup {
        std::hint::black_box(pass()?);
    }
    let mut iter_seconds = Vec::with_capacity(iters);
    for _ in 0..iters {
        let start = Instant::now();
        std::hint::black_box(pass()?);
        iter_seconds.push(start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE));
    }
    let frames = clips.len() as f64;
    let mut fps: Vec<f64> = iter_seconds.iter().map(|s| frames / s).collect();
    let mean_fps = fps.iter().sum::<f64>() / fps.len() as f64;
    fps.sort_by(f64::total_cmp);
    let mid = fps.len() / 2;
    let median_fps = if fps.len() % 2 == 1 {
        fps[mid]
    } else {
        0.5 * (fps[mid - 1] + fps[mid])
    };
    let spec = &pipeline.detector.spec;
    Ok(BenchReport {
        median_fps,
        mean_fps,
        iters,
        warmup,
        frames_per_iter: clips.len(),
        iter_seconds,
        ops_per_frame: OpCounts::for_shape(spec.shape(), spec.feature_dim()),
        host: HostInfo::current(),
        timestamp_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubling_grid_work_increases_ops() {
        let base = OpCounts::for_shape(GridShape::new(7, 5, 4), 16);
        for shape in [
            GridShape::new(7, 10, 4),
            GridShape::new(7, 5, 8),
            GridShape::new(10, 5, 4),
        ] {
            let bigger = OpCounts::for_shape(shape, 16);
            assert!(bigger.forward_macs > base.forward_macs);
            assert!(bigger.decode_scores > base.decode_scores);
        }
    }
}
