//! Synthetic datasets on disk.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! manifest.json          DatasetManifest
//! clips/<video_id>.jsonl ground-truth annotation lines of one clip
//! ```

mod io;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use io::{
    load_annotations, load_detections, load_ground_truths, save_annotations, save_detections,
    save_ground_truths, AnnotationRecord,
};
pub use synth::{generate_clip, ClipParams, MotionProfile, ObjectBox, ObjectMotion, SyntheticClip};

use crate::error::{Error, Result};

pub const MANIFEST_FORMAT: &str = "stadkit-manifest/1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Generation parameters of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetParams {
    pub seed: u64,
    pub train_videos: usize,
    pub test_videos: usize,
    pub clip: ClipParams,
}

impl Default for DatasetParams {
    fn default() -> Self {
        DatasetParams {
            seed: 42,
            train_videos: 200,
            test_videos: 50,
            clip: ClipParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    /// Relative to the dataset root.
    pub path: String,
    pub video_id: String,
    pub split: Split,
    pub num_frames: usize,
    pub motion: Vec<ObjectMotion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub generator_version: String,
    pub classes: Vec<String>,
    pub width: usize,
    pub height: usize,
    pub params: DatasetParams,
    pub clips: Vec<ClipRecord>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.format != MANIFEST_FORMAT {
            return Err(Error::invalid(format!(
                "unsupported manifest format `{}`",
                self.format
            )));
        }
        if self.classes.is_empty() {
            return Err(Error::invalid("manifest has an empty class table"));
        }
        let mut ids: Vec<&str> = self.clips.iter().map(|c| c.video_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate video_id in manifest"));
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ClipRecord> {
        self.clips.iter().filter(move |c| c.split == split)
    }
}

/// Class names used for generated data.
pub fn default_class_names(n: usize) -> Vec<String> {
    const NAMES: [&str; 4] = ["small_fast", "tall_vertical", "wide_diagonal", "large_slow"];
    (0..n)
        .map(|k| match NAMES.get(k) {
            Some(s) => s.to_string(),
            None => format!("class_{k}"),
        })
        .collect()
}

/// SplitMix64 step, used to derive independent per-clip seeds.
fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generate all clips of a dataset in memory.
pub fn generate_dataset(params: &DatasetParams) -> Result<(DatasetManifest, Vec<SyntheticClip>)> {
    params.clip.validate()?;
    if params.train_videos + params.test_videos == 0 {
        return Err(Error::invalid("dataset needs at least one video"));
    }
    let mut clips = Vec::new();
    let mut records = Vec::new();
    let splits = std::iter::repeat_n(Split::Train, params.train_videos)
        .chain(std::iter::repeat_n(Split::Test, params.test_videos));
    for (i, split) in splits.enumerate() {
        let local = match split {
            Split::Train => i,
            Split::Test => i - params.train_videos,
        };
        let video_id = match split {
            Split::Train => format!("train_{local:04}"),
            Split::Test => format!("test_{local:04}"),
        };
        let clip = generate_clip(&video_id, mix_seed(params.seed, i as u64), &params.clip)?;
        records.push(ClipRecord {
            path: format!("clips/{video_id}.jsonl"),
            video_id,
            split,
            num_frames: clip.num_frames(),
            motion: clip.motion.clone(),
        });
        clips.push(clip);
    }
    let manifest = DatasetManifest {
        format: MANIFEST_FORMAT.to_string(),
        generator_version: crate::VERSION.to_string(),
        classes: default_class_names(params.clip.classes),
        width: params.clip.width,
        height: params.clip.height,
        params: params.clone(),
        clips: records,
    };
    Ok((manifest, clips))
}

/// Write manifest and clip files under `root`.
pub fn write_dataset(
    root: &Path,
    manifest: &DatasetManifest,
    clips: &[SyntheticClip],
) -> Result<()> {
    fs::create_dir_all(root.join("clips")).map_err(|e| Error::io(root, e))?;
    for (rec, clip) in manifest.clips.iter().zip(clips) {
        save_ground_truths(&root.join(&rec.path), &clip.all_ground_truths())?;
    }
    let path = root.join(MANIFEST_FILE);
    let body = serde_json::to_string_pretty(manifest)?;
    fs::write(&path, body + "\n").map_err(|e| Error::io(&path, e))
}

/// A dataset directory opened for reading.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let body = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&body)?;
        manifest.validate()?;
        Ok(Dataset {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn record(&self, video_id: &str) -> Option<&ClipRecord> {
        self.manifest.clips.iter().find(|c| c.video_id == video_id)
    }

    pub fn load_clip(&self, rec: &ClipRecord) -> Result<SyntheticClip> {
        let gts = load_ground_truths(&self.root.join(&rec.path), &self.manifest.classes)?;
        let mut frames: Vec<Vec<ObjectBox>> = vec![Vec::new(); rec.num_frames];
        for g in gts {
            if g.video_id != rec.video_id {
                return Err(Error::invalid(format!(
                    "clip file {} contains video `{}`",
                    rec.path, g.video_id
                )));
            }
            let slot = frames.get_mut(g.frame_index).ok_or_else(|| {
                Error::invalid(format!(
                    "frame {} outside clip {}",
                    g.frame_index, rec.video_id
                ))
            })?;
            slot.push(ObjectBox {
                instance_id: g.instance_id,
                class_id: g.class_id,
                bbox: g.bbox,
            });
        }
        Ok(SyntheticClip {
            video_id: rec.video_id.clone(),
            width: self.manifest.width,
            height: self.manifest.height,
            first_frame: 0,
            frames,
            motion: rec.motion.clone(),
        })
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<SyntheticClip>> {
        self.manifest
            .split(split)
            .map(|r| self.load_clip(r))
            .collect()
    }
}
