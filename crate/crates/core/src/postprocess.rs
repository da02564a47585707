//! From raw predictions to scored detections: decode, threshold and greedy
//! per-class non-maximum suppression.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, sigmoid, AnchorSet, BBox, GridCoord};
use crate::model::{PredictionGrid, CLASS_OFFSET, CONF_INDEX};

/// Scored box in one frame. Serializes as a detection annotation line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub video_id: String,
    pub frame_index: usize,
    pub class_id: usize,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

/// Total order used everywhere detections are ranked: score descending, then
/// lower `x_min`, lower `y_min`, then the remaining fields.
pub fn rank_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.x_min.total_cmp(&b.bbox.x_min))
        .then(a.bbox.y_min.total_cmp(&b.bbox.y_min))
        .then(a.bbox.x_max.total_cmp(&b.bbox.x_max))
        .then(a.bbox.y_max.total_cmp(&b.bbox.y_max))
        .then(a.class_id.cmp(&b.class_id))
        .then(a.video_id.cmp(&b.video_id))
        .then(a.frame_index.cmp(&b.frame_index))
}

/// Emit a detection for every `(cell, anchor, class)` whose score
/// `σ(conf) · σ(class logit)` exceeds `conf_threshold`. Boxes are clipped to
/// the `S·stride` square frame.
pub fn decode_grid(
    preds: &PredictionGrid,
    anchors: &AnchorSet,
    stride: usize,
    conf_threshold: f64,
    video_id: &str,
    frame_index: usize,
) -> Result<Vec<Detection>> {
    if !(0.0..=1.0).contains(&conf_threshold) {
        return Err(Error::invalid(format!(
            "confidence threshold {conf_threshold} outside [0, 1]"
        )));
    }
    let shape = preds.shape();
    if shape.anchors != anchors.len() {
        return Err(Error::shape(anchors.len(), shape.anchors));
    }
    let side = (shape.size * stride) as f64;
    let mut out = Vec::new();
    for e in 0..shape.entries() {
        let entry = preds.entry(e);
        let objectness = sigmoid(entry[CONF_INDEX]);
        // score <= objectness, so nothing at this entry can pass
        if objectness <= conf_threshold && conf_threshold > 0.0 {
            continue;
        }
        let (gx, gy, a) = shape.entry_coords(e);
        let mut bbox = None;
        for k in 0..shape.classes {
            let score = objectness * sigmoid(entry[CLASS_OFFSET + k]);
            if score > conf_threshold {
                let b = *bbox.get_or_insert_with(|| {
                    geometry::decode_box(
                        preds.raw_box(e),
                        GridCoord::new(gx, gy),
                        anchors.get(a),
                        stride,
                    )
                    .clip(side, side)
                });
                out.push(Detection {
                    video_id: video_id.to_string(),
                    frame_index,
                    class_id: k,
                    score,
                    bbox: b,
                });
            }
        }
    }
    Ok(out)
}

/// Greedy non-maximum suppression, independent per `(video, frame, class)`.
///
/// Detections are visited in [`rank_order`]; one is kept iff its IoU with
/// every already kept detection of the same group is `<= iou_threshold`.
/// The result is in rank order.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Result<Vec<Detection>> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::invalid(format!(
            "NMS threshold {iou_threshold} outside (0, 1]"
        )));
    }
    let mut sorted: Vec<&Detection> = dets.iter().collect();
    sorted.sort_by(|a, b| rank_order(a, b));
    let mut kept_boxes: BTreeMap<(&str, usize, usize), Vec<BBox>> = BTreeMap::new();
    let mut out = Vec::new();
    for d in sorted {
        let kept = kept_boxes
            .entry((d.video_id.as_str(), d.frame_index, d.class_id))
            .or_default();
        if kept
            .iter()
            .all(|k| geometry::iou(k, &d.bbox) <= iou_threshold)
        {
            kept.push(d.bbox);
            out.push(d.clone());
        }
    }
    Ok(out)
}
