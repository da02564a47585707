//! JSON-lines annotation files.
//!
//! One object per line. Ground truths and detections share the schema:
//!
//! ```text
//! {"video_id":"train_0000","frame_index":3,"class_id":1,"instance_id":0,"box":[x_min,y_min,x_max,y_max]}
//! {"video_id":"test_0001","frame_index":0,"class_id":2,"score":0.91,"box":[x_min,y_min,x_max,y_max]}
//! ```
//!
//! Ground-truth lines carry `instance_id`, detection lines carry `score`. An
//! optional `class_name` must name the same entry of the class table as
//! `class_id`. Blank lines are ignored.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assignment::GroundTruth;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::postprocess::Detection;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub video_id: String,
    pub frame_index: usize,
    pub class_id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<u32>,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

impl From<&GroundTruth> for AnnotationRecord {
    fn from(g: &GroundTruth) -> Self {
        AnnotationRecord {
            video_id: g.video_id.clone(),
            frame_index: g.frame_index,
            class_id: g.class_id,
            class_name: None,
            score: None,
            instance_id: Some(g.instance_id),
            bbox: g.bbox,
        }
    }
}

impl From<&Detection> for AnnotationRecord {
    fn from(d: &Detection) -> Self {
        AnnotationRecord {
            video_id: d.video_id.clone(),
            frame_index: d.frame_index,
            class_id: d.class_id,
            class_name: None,
            score: Some(d.score),
            instance_id: None,
            bbox: d.bbox,
        }
    }
}

impl AnnotationRecord {
    /// Ground truth view; requires `instance_id` and a box with positive area.
    pub fn to_ground_truth(&self) -> Result<GroundTruth> {
        let instance_id = self
            .instance_id
            .ok_or_else(|| Error::invalid("ground-truth record without instance_id"))?;
        if !self.bbox.is_valid() || self.bbox.area() <= 0.0 {
            return Err(Error::invalid("ground-truth box has no area"));
        }
        Ok(GroundTruth {
            video_id: self.video_id.clone(),
            frame_index: self.frame_index,
            instance_id,
            class_id: self.class_id,
            bbox: self.bbox,
        })
    }

    /// Detection view; requires `score`.
    pub fn to_detection(&self) -> Result<Detection> {
        let score = self
            .score
            .ok_or_else(|| Error::invalid("detection record without score"))?;
        if !self.bbox.is_valid() {
            return Err(Error::invalid("malformed detection box"));
        }
        Ok(Detection {
            video_id: self.video_id.clone(),
            frame_index: self.frame_index,
            class_id: self.class_id,
            score,
            bbox: self.bbox,
        })
    }

    fn check_class(&self, classes: &[String]) -> std::result::Result<(), String> {
        if self.class_id >= classes.len() {
            return Err(format!("unknown class id {}", self.class_id));
        }
        if let Some(name) = &self.class_name {
            match classes.iter().position(|c| c == name) {
                None => return Err(format!("unknown class `{name}`")),
                Some(i) if i != self.class_id => {
                    return Err(format!(
                        "class `{name}` does not match class_id {}",
                        self.class_id
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Read annotation records, validating class ids/names against `classes`.
/// A missing file is an error; an empty file yields no records.
pub fn load_annotations(path: &Path, classes: &[String]) -> Result<Vec<AnnotationRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: AnnotationRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if !rec.bbox.is_finite() {
            return Err(parse_err("box has non-finite coordinates".into()));
        }
        rec.check_class(classes)
            .map_err(|m| match &rec.class_name {
                Some(n) if m.starts_with("unknown class `") => Error::UnknownClass(n.clone()),
                _ => parse_err(m),
            })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn save_annotations(path: &Path, records: &[AnnotationRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_ground_truths(path: &Path, classes: &[String]) -> Result<Vec<GroundTruth>> {
    load_annotations(path, classes)?
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.to_ground_truth().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn save_ground_truths(path: &Path, gts: &[GroundTruth]) -> Result<()> {
    let recs: Vec<AnnotationRecord> = gts.iter().map(AnnotationRecord::from).collect();
    save_annotations(path, &recs)
}

pub fn load_detections(path: &Path, classes: &[String]) -> Result<Vec<Detection>> {
    load_annotations(path, classes)?
        .iter()
        .map(AnnotationRecord::to_detection)
        .collect()
}

pub fn save_detections(path: &Path, dets: &[Detection]) -> Result<()> {
    let recs: Vec<AnnotationRecord> = dets.iter().map(AnnotationRecord::from).collect();
    save_annotations(path, &recs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes() -> Vec<String> {
        vec!["a".into(), "b".into()]
    }

    fn write(dir: &Path, body: &str) -> std::path::PathBuf {
        let p = dir.join("ann.jsonl");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn ground_truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let gts = vec![
            GroundTruth {
                video_id: "v".into(),
                frame_index: 2,
                instance_id: 1,
                class_id: 1,
                bbox: BBox::from([0.1, 0.2, 30.000000000000004, 40.5]),
            },
            GroundTruth {
                video_id: "w".into(),
                frame_index: 0,
                instance_id: 0,
                class_id: 0,
                bbox: BBox::from([1.0, 2.0, 3.0, 4.0]),
            },
        ];
        let p = dir.path().join("gt.jsonl");
        save_ground_truths(&p, &gts).unwrap();
        assert_eq!(load_ground_truths(&p, &classes()).unwrap(), gts);
    }

    #[test]
    fn detection_line_format() {
        let d = Detection {
            video_id: "v".into(),
            frame_index: 4,
            class_id: 1,
            score: 0.5,
            bbox: BBox::from([1.0, 2.0, 3.0, 4.0]),
        };
        let line = serde_json::to_string(&AnnotationRecord::from(&d)).unwrap();
        assert_eq!(
            line,
            r#"{"video_id":"v","frame_index":4,"class_id":1,"score":0.5,"box":[1.0,2.0,3.0,4.0]}"#
        );
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "");
        assert!(load_annotations(&p, &classes()).unwrap().is_empty());
    }

    #[test]
    fn missing_box_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "{\"video_id\":\"v\",\"frame_index\":0,\"class_id\":0,\"instance_id\":0,\"box\":[0,0,1,1]}\n\n{\"video_id\":\"v\",\"frame_index\":1,\"class_id\":0}\n",
        );
        match load_annotations(&p, &classes()) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("box"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_class_name_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "{\"video_id\":\"v\",\"frame_index\":0,\"class_id\":0,\"class_name\":\"zebra\",\"instance_id\":0,\"box\":[0,0,1,1]}\n",
        );
        assert!(
            matches!(load_annotations(&p, &classes()), Err(Error::UnknownClass(n)) if n == "zebra")
        );
        let p = write(
            dir.path(),
            "{\"video_id\":\"v\",\"frame_index\":0,\"class_id\":7,\"instance_id\":0,\"box\":[0,0,1,1]}\n",
        );
        assert!(matches!(
            load_annotations(&p, &classes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn zero_area_ground_truth_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "{\"video_id\":\"v\",\"frame_index\":0,\"class_id\":0,\"instance_id\":0,\"box\":[1,1,1,5]}\n",
        );
        assert!(load_ground_truths(&p, &classes()).is_err());
    }
}
