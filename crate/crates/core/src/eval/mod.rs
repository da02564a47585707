//! Frame mAP, action tubes and video mAP, plus the throughput benchmark.
//!
//! Both AP flavours use greedy matching in rank order and all-point
//! interpolation of the precision envelope.

mod bench;
mod tube;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use bench::{bench_fps, BenchReport, HostInfo, OpCounts, Pipeline};
pub use tube::{gt_tubes, link_tubes, tube_iou, video_ap, video_map, ActionTube, TubeLinkConfig};

use crate::assignment::GroundTruth;
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::postprocess::{rank_order, Detection};

pub const INTERPOLATION: &str = "all-point";

/// Precision-recall curve with one point per ranked detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PRCurve {
    /// `(recall, precision)` after each ranked detection.
    pub points: Vec<(f64, f64)>,
    pub ap: f64,
    pub num_ground_truth: usize,
    /// Set when the class has no ground truth; `ap` is then 0.
    pub no_ground_truth: bool,
}

impl PRCurve {
    /// Curve of a ranked list of match outcomes against `num_gt` positives.
    ///
    /// `AP = (1 / num_gt) · Σ over true positives of the envelope precision
    /// at that rank`, where the envelope is the running maximum from the
    /// right. This is exactly the area under the interpolated curve.
    pub fn from_matches(is_tp: &[bool], num_gt: usize) -> Self {
        if num_gt == 0 {
            return PRCurve {
                points: Vec::new(),
                ap: 0.0,
                num_ground_truth: 0,
                no_ground_truth: true,
            };
        }
        let mut points = Vec::with_capacity(is_tp.len());
        let mut tp = 0usize;
        for (rank, &hit) in is_tp.iter().enumerate() {
            tp += usize::from(hit);
            points.push((tp as f64 / num_gt as f64, tp as f64 / (rank + 1) as f64));
        }
        let mut envelope = vec![0.0; points.len()];
        let mut best = 0.0f64;
        for i in (0..points.len()).rev() {
            best = best.max(points[i].1);
            envelope[i] = best;
        }
        let mut area = 0.0;
        for (i, &hit) in is_tp.iter().enumerate() {
            if hit {
                area += envelope[i];
            }
        }
        PRCurve {
            points,
            ap: area / num_gt as f64,
            num_ground_truth: num_gt,
            no_ground_truth: false,
        }
    }
}

/// AP of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class_id: usize,
    pub ap: f64,
    pub num_ground_truth: usize,
    pub num_detections: usize,
    /// Excluded from the mean because the class has no ground truth.
    pub excluded: bool,
}

/// Per-class APs and their mean over classes with ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanAp {
    pub per_class: Vec<ClassAp>,
    pub mean: f64,
}

impl MeanAp {
    pub(crate) fn from_curves(curves: Vec<(usize, usize, PRCurve)>) -> Result<Self> {
        let per_class: Vec<ClassAp> = curves
            .into_iter()
            .map(|(class_id, num_detections, c)| ClassAp {
                class_id,
                ap: c.ap,
                num_ground_truth: c.num_ground_truth,
                num_detections,
                excluded: c.no_ground_truth,
            })
            .collect();
        let counted: Vec<f64> = per_class
            .iter()
            .filter(|c| !c.excluded)
            .map(|c| c.ap)
            .collect();
        if counted.is_empty() {
            return Err(Error::invalid("no class has any ground truth"));
        }
        let mean = counted.iter().sum::<f64>() / counted.len() as f64;
        Ok(MeanAp { per_class, mean })
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if (0.0..1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::invalid(format!("IoU threshold {t} outside [0, 1)")))
    }
}

/// Ground truths sorted into a canonical order so matching never depends on
/// input order.
fn canonical_gts<'a>(gts: impl Iterator<Item = &'a GroundTruth>) -> Vec<&'a GroundTruth> {
    let mut v: Vec<&GroundTruth> = gts.collect();
    v.sort_by(|a, b| {
        a.video_id
            .cmp(&b.video_id)
            .then(a.frame_index.cmp(&b.frame_index))
            .then(a.instance_id.cmp(&b.instance_id))
            .then(cmp_box(&a.bbox, &b.bbox))
    });
    v
}

fn cmp_box(a: &BBox, b: &BBox) -> std::cmp::Ordering {
    a.x_min
        .total_cmp(&b.x_min)
        .then(a.y_min.total_cmp(&b.y_min))
        .then(a.x_max.total_cmp(&b.x_max))
        .then(a.y_max.total_cmp(&b.y_max))
}

/// Per-frame AP of one class.
///
/// Detections are ranked by score; each one matches the still unmatched
/// ground truth of its frame with the highest IoU (first in canonical order
/// on ties) if that IoU exceeds `iou_threshold`, else it is a false positive.
pub fn frame_ap(
    dets: &[Detection],
    gts: &[GroundTruth],
    class_id: usize,
    iou_threshold: f64,
) -> Result<PRCurve> {
    check_threshold(iou_threshold)?;
    let class_gts = canonical_gts(gts.iter().filter(|g| g.class_id == class_id));
    let mut by_frame: BTreeMap<(&str, usize), Vec<&BBox>> = BTreeMap::new();
    for g in &class_gts {
        by_frame
            .entry((g.video_id.as_str(), g.frame_index))
            .or_default()
            .push(&g.bbox);
    }
    let mut ranked: Vec<&Detection> = dets.iter().filter(|d| d.class_id == class_id).collect();
    ranked.sort_by(|a, b| rank_order(a, b));

    let mut matched: BTreeSet<(&str, usize, usize)> = BTreeSet::new();
    let mut is_tp = Vec::with_capacity(ranked.len());
    for d in ranked {
        let key = (d.video_id.as_str(), d.frame_index);
        let mut best: Option<(usize, f64)> = None;
        if let Some(frame_gts) = by_frame.get(&key) {
            for (j, g) in frame_gts.iter().enumerate() {
                if matched.contains(&(key.0, key.1, j)) {
                    continue;
                }
                let o = iou(&d.bbox, g);
                if best.is_none_or(|(_, b)| o > b) {
                    best = Some((j, o));
                }
            }
        }
        match best {
            Some((j, o)) if o > iou_threshold => {
                matched.insert((key.0, key.1, j));
                is_tp.push(true);
            }
            _ => is_tp.push(false),
        }
    }
    Ok(PRCurve::from_matches(&is_tp, class_gts.len()))
}

/// Frame AP for every class in `0..classes` and their mean over classes that
/// have ground truth. Errors when no class has any.
pub fn frame_map(
    dets: &[Detection],
    gts: &[GroundTruth],
    classes: usize,
    iou_threshold: f64,
) -> Result<MeanAp> {
    let mut curves = Vec::with_capacity(classes);
    for k in 0..classes {
        let n = dets.iter().filter(|d| d.class_id == k).count();
        curves.push((k, n, frame_ap(dets, gts, k, iou_threshold)?));
    }
    MeanAp::from_curves(curves)
}

/// Ground truths turned into perfect detections (score 1).
pub fn oracle_detections(gts: &[GroundTruth]) -> Vec<Detection> {
    gts.iter()
        .map(|g| Detection {
            video_id: g.video_id.clone(),
            frame_index: g.frame_index,
            class_id: g.class_id,
            score: 1.0,
            bbox: g.bbox,
        })
        .collect()
}
