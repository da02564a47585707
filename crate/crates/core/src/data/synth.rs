//! Deterministic synthetic clips of moving boxes.
//!
//! Every class has its own size/motion signature: small fast squares, tall
//! boxes drifting vertically, wide boxes moving diagonally and large slow
//! squares. Classes beyond the fourth reuse a shape with a faster speed tier.
//! Objects bounce off the frame border so boxes never leave the frame, and
//! within a clip no two objects ever share a grid cell or overlap much.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::GroundTruth;
use crate::error::{Error, Result};
use crate::geometry::{self, BBox, CenterBox};

/// How objects move over time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionProfile {
    /// Constant class-dependent velocity, reflecting at the borders.
    #[default]
    Smooth,
    /// Objects stay where they start.
    Static,
}

impl FromStr for MotionProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smooth" => Ok(MotionProfile::Smooth),
            "static" => Ok(MotionProfile::Static),
            other => Err(Error::invalid(format!("unknown motion profile `{other}`"))),
        }
    }
}

/// One object's box in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectBox {
    pub instance_id: u32,
    pub class_id: usize,
    pub bbox: BBox,
}

/// Motion parameters of one object, recorded for reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMotion {
    pub instance_id: u32,
    pub class_id: usize,
    /// Center at frame 0.
    pub start: [f64; 2],
    /// Pixels per frame before reflection.
    pub velocity: [f64; 2],
    pub size: [f64; 2],
}

/// A short video with exact per-frame boxes. The last frame is the keyframe.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticClip {
    pub video_id: String,
    pub width: usize,
    pub height: usize,
    /// Index of `frames[0]` within the source video.
    pub first_frame: usize,
    pub frames: Vec<Vec<ObjectBox>>,
    pub motion: Vec<ObjectMotion>,
}

impl SyntheticClip {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// Sub-clip of at most `len` frames ending at `keyframe`, as fed to the
    /// detector when predicting that frame.
    pub fn window(&self, keyframe: usize, len: usize) -> Result<SyntheticClip> {
        if keyframe >= self.frames.len() || len == 0 {
            return Err(Error::invalid(format!(
                "keyframe {keyframe} / window {len} out of range for {} frames",
                self.frames.len()
            )));
        }
        let start = (keyframe + 1).saturating_sub(len);
        Ok(SyntheticClip {
            video_id: self.video_id.clone(),
            width: self.width,
            height: self.height,
            first_frame: self.first_frame + start,
            frames: self.frames[start..=keyframe].to_vec(),
            motion: self.motion.clone(),
        })
    }

    pub fn keyframe(&self) -> &[ObjectBox] {
        self.frames.last().map(|f| f.as_slice()).unwrap_or(&[])
    }

    pub fn keyframe_index(&self) -> usize {
        self.first_frame + self.frames.len().saturating_sub(1)
    }

    /// Ground truths of frame `t` (relative to `frames[0]`).
    pub fn ground_truths(&self, t: usize) -> Vec<GroundTruth> {
        self.frames[t]
            .iter()
            .map(|o| GroundTruth {
                video_id: self.video_id.clone(),
                frame_index: self.first_frame + t,
                instance_id: o.instance_id,
                class_id: o.class_id,
                bbox: o.bbox,
            })
            .collect()
    }

    /// Ground truths of every frame, in frame order.
    pub fn all_ground_truths(&self) -> Vec<GroundTruth> {
        (0..self.frames.len())
            .flat_map(|t| self.ground_truths(t))
            .collect()
    }
}

/// Parameters of [`generate_clip`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipParams {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub classes: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Grid cell size used to keep objects in distinct cells.
    pub cell_size: usize,
    pub motion: MotionProfile,
}

impl Default for ClipParams {
    fn default() -> Self {
        ClipParams {
            width: 224,
            height: 224,
            frames: 16,
            classes: 4,
            min_objects: 1,
            max_objects: 3,
            cell_size: 32,
            motion: MotionProfile::Smooth,
        }
    }
}

impl ClipParams {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::invalid("clips need at least one frame"));
        }
        if self.classes < 2 {
            return Err(Error::invalid("at least two classes are required"));
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return Err(Error::invalid(
                "object count range must satisfy 1 <= min <= max",
            ));
        }
        if self.cell_size == 0 || self.cell_size > self.width.min(self.height) {
            return Err(Error::invalid(
                "cell size must be positive and fit inside the frame",
            ));
        }
        Ok(())
    }
}

const MAX_PAIR_IOU: f64 = 0.05;
const PLACEMENT_ATTEMPTS: usize = 200;

/// Size in pixels (for a 224 frame) and speed tier of a class.
fn class_signature(class_id: usize, rng: &mut ChaCha8Rng) -> ([f64; 2], [f64; 2]) {
    let tier = (class_id / 4) as f64;
    match class_id % 4 {
        0 => {
            let s = rng.gen_range(20.0..28.0);
            let speed = rng.gen_range(4.0..6.0) * (1.0 + tier);
            ([s, s], [speed, 0.0])
        }
        1 => {
            let w = rng.gen_range(32.0..40.0);
            let h = rng.gen_range(54.0..66.0);
            let speed = rng.gen_range(2.0..3.0) * (1.0 + tier);
            ([w, h], [0.0, speed])
        }
        2 => {
            let w = rng.gen_range(54.0..66.0);
            let h = rng.gen_range(32.0..40.0);
            let speed = rng.gen_range(1.5..2.5) * (1.0 + tier);
            ([w, h], [speed, speed])
        }
        _ => {
            let s = rng.gen_range(88.0..112.0);
            let speed = rng.gen_range(0.3..0.8) * (1.0 + tier);
            ([s, s], [speed, speed * 0.5])
        }
    }
}

/// Position of a point moving with constant speed inside `[lo, hi]`,
/// reflecting at both ends.
fn reflect(start: f64, velocity: f64, t: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let period = 2.0 * span;
    let p = (start - lo + velocity * t).rem_euclid(period);
    if p <= span {
        lo + p
    } else {
        lo + period - p
    }
}

fn trajectory(m: &ObjectMotion, params: &ClipParams) -> Vec<BBox> {
    let (w, h) = (m.size[0], m.size[1]);
    let (fw, fh) = (params.width as f64, params.height as f64);
    (0..params.frames)
        .map(|t| {
            let t = t as f64;
            let cx = reflect(m.start[0], m.velocity[0], t, w / 2.0, fw - w / 2.0);
            let cy = reflect(m.start[1], m.velocity[1], t, h / 2.0, fh - h / 2.0);
            CenterBox::new(cx, cy, w, h).to_bbox().clip(fw, fh)
        })
        .collect()
}

fn compatible(a: &[BBox], b: &[BBox], params: &ClipParams) -> bool {
    let cells = params.width.min(params.height) / params.cell_size;
    a.iter().zip(b).all(|(x, y)| {
        let cx = geometry::grid_cell(&x.to_center(), params.cell_size, cells.max(1));
        let cy = geometry::grid_cell(&y.to_center(), params.cell_size, cells.max(1));
        let distinct = match (cx, cy) {
            (Ok(p), Ok(q)) => p != q,
            _ => false,
        };
        distinct && geometry::iou(x, y) < MAX_PAIR_IOU
    })
}

/// Generate one clip. Deterministic in `seed`.
pub fn generate_clip(video_id: &str, seed: u64, params: &ClipParams) -> Result<SyntheticClip> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = params.width.min(params.height) as f64 / 224.0;
    let n_objects = rng.gen_range(params.min_objects..=params.max_objects);

    let mut motion: Vec<ObjectMotion> = Vec::new();
    let mut tracks: Vec<Vec<BBox>> = Vec::new();
    for _ in 0..n_objects {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let class_id = rng.gen_range(0..params.classes);
            let (size, speed) = class_signature(class_id, &mut rng);
            let size = [size[0] * scale, size[1] * scale];
            let sign = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let velocity = match params.motion {
                MotionProfile::Smooth => [
                    speed[0] * scale * sign(&mut rng),
                    speed[1] * scale * sign(&mut rng),
                ],
                MotionProfile::Static => [0.0, 0.0],
            };
            let start = [
                rng.gen_range(size[0] / 2.0..=params.width as f64 - size[0] / 2.0),
                rng.gen_range(size[1] / 2.0..=params.height as f64 - size[1] / 2.0),
            ];
            let candidate = ObjectMotion {
                instance_id: motion.len() as u32,
                class_id,
                start,
                velocity,
                size,
            };
            let track = trajectory(&candidate, params);
            if tracks.iter().all(|other| compatible(&track, other, params)) {
                motion.push(candidate);
                tracks.push(track);
                break;
            }
        }
    }
    if motion.is_empty() {
        return Err(Error::invalid("could not place any object"));
    }

    let frames = (0..params.frames)
        .map(|t| {
            motion
                .iter()
                .zip(&tracks)
                .map(|(m, tr)| ObjectBox {
                    instance_id: m.instance_id,
                    class_id: m.class_id,
                    bbox: tr[t],
                })
                .collect()
        })
        .collect();
    Ok(SyntheticClip {
        video_id: video_id.to_string(),
        width: params.width,
        height: params.height,
        first_frame: 0,
        frames,
        motion,
    })
}
