use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{check_threshold, cmp_box, MeanAp, PRCurve};
use crate::assignment::GroundTruth;
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::postprocess::{rank_order, Detection};

/// Same-class boxes linked across frames of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionTube {
    pub video_id: String,
    pub class_id: usize,
    /// Mean score of the member detections.
    pub score: f64,
    /// `(frame_index, box)` with strictly increasing frame indices.
    pub boxes: Vec<(usize, BBox)>,
}

impl ActionTube {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn start(&self) -> usize {
        self.boxes.first().map_or(0, |b| b.0)
    }

    pub fn end(&self) -> usize {
        self.boxes.last().map_or(0, |b| b.0)
    }

    pub fn box_at(&self, frame: usize) -> Option<&BBox> {
        self.boxes
            .binary_search_by_key(&frame, |b| b.0)
            .ok()
            .map(|i| &self.boxes[i].1)
    }
}

/// Parameters of the greedy online linker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeLinkConfig {
    /// Minimum IoU between a tube's last box and its extension.
    pub link_iou: f64,
    /// Frames a tube may go unextended before it is closed.
    pub max_gap: usize,
}

impl Default for TubeLinkConfig {
    fn default() -> Self {
        TubeLinkConfig {
            link_iou: 0.3,
            max_gap: 1,
        }
    }
}

struct Growing<'a> {
    members: Vec<&'a Detection>,
    score_sum: f64,
}

impl<'a> Growing<'a> {
    fn last(&self) -> &'a Detection {
        self.members.last().expect("tubes are never empty")
    }

    fn mean_score(&self) -> f64 {
        self.score_sum / self.members.len() as f64
    }

    fn finish(self) -> ActionTube {
        let first = self.members[0];
        ActionTube {
            video_id: first.video_id.clone(),
            class_id: first.class_id,
            score: self.mean_score(),
            boxes: self
                .members
                .iter()
                .map(|d| (d.frame_index, d.bbox))
                .collect(),
        }
    }
}

/// Greedy online tube linking, run independently per `(video, class)`.
///
/// Frames are visited in increasing order. Live tubes, taken by mean score
/// (older first on ties), each claim the unclaimed detection with the highest
/// IoU against their last box (higher score, then rank order, on ties) when
/// that IoU is at least `link_iou`. Leftover detections open new tubes. A
/// tube whose last frame lies more than `max_gap` skipped frames back is
/// closed. Output is ordered by video, class and start frame.
pub fn link_tubes(dets: &[Detection], config: &TubeLinkConfig) -> Result<Vec<ActionTube>> {
    if !(config.link_iou > 0.0 && config.link_iou <= 1.0) {
        return Err(Error::invalid(format!(
            "link IoU {} outside (0, 1]",
            config.link_iou
        )));
    }
    let mut groups: BTreeMap<(&str, usize), BTreeMap<usize, Vec<&Detection>>> = BTreeMap::new();
    for d in dets {
        groups
            .entry((d.video_id.as_str(), d.class_id))
            .or_default()
            .entry(d.frame_index)
            .or_default()
            .push(d);
    }
    let mut out = Vec::new();
    for frames in groups.into_values() {
        let mut live: Vec<Growing> = Vec::new();
        let mut done: Vec<Growing> = Vec::new();
        for (frame, mut frame_dets) in frames {
            frame_dets.sort_by(|a, b| rank_order(a, b));

            let (keep, closed): (Vec<_>, Vec<_>) = live
                .into_iter()
                .partition(|t| frame - t.last().frame_index - 1 <= config.max_gap);
            done.extend(closed);
            live = keep;

            let mut order: Vec<usize> = (0..live.len()).collect();
            order.sort_by(|&a, &b| {
                live[b]
                    .mean_score()
                    .total_cmp(&live[a].mean_score())
                    .then(a.cmp(&b))
            });
            let mut claimed = vec![false; frame_dets.len()];
            for t in order {
                let last = live[t].last().bbox;
                let mut best: Option<(usize, f64)> = None;
                for (j, d) in frame_dets.iter().enumerate() {
                    if claimed[j] {
                        continue;
                    }
                    let o = iou(&last, &d.bbox);
                    let better = match best {
                        None => true,
                        Some((bj, bo)) => o > bo || (o == bo && d.score > frame_dets[bj].score),
                    };
                    if better {
                        best = Some((j, o));
                    }
                }
                if let Some((j, o)) = best {
                    if o >= config.link_iou {
                        claimed[j] = true;
                        live[t].members.push(frame_dets[j]);
                        live[t].score_sum += frame_dets[j].score;
                    }
                }
            }
            for (j, d) in frame_dets.iter().enumerate() {
                if !claimed[j] {
                    live.push(Growing {
                        members: vec![d],
                        score_sum: d.score,
                    });
                }
            }
        }
        done.extend(live);
        let mut tubes: Vec<ActionTube> = done.into_iter().map(Growing::finish).collect();
        // stable: tubes opened in the same frame keep their opening order
        tubes.sort_by_key(|t| t.start());
        out.extend(tubes);
    }
    Ok(out)
}

/// One tube per `(video, instance)` of the ground truth, score 1.
pub fn gt_tubes(gts: &[GroundTruth]) -> Result<Vec<ActionTube>> {
    let mut groups: BTreeMap<(&str, u32), Vec<&GroundTruth>> = BTreeMap::new();
    for g in gts {
        groups
            .entry((g.video_id.as_str(), g.instance_id))
            .or_default()
            .push(g);
    }
    let mut out = Vec::with_capacity(groups.len());
    for ((video, instance), mut members) in groups {
        members.sort_by_key(|g| g.frame_index);
        if members
            .windows(2)
            .any(|w| w[0].frame_index == w[1].frame_index)
        {
            return Err(Error::invalid(format!(
                "instance {instance} of `{video}` has two boxes in one frame"
            )));
        }
        let class_id = members[0].class_id;
        if members.iter().any(|g| g.class_id != class_id) {
            return Err(Error::invalid(format!(
                "instance {instance} of `{video}` changes class"
            )));
        }
        out.push(ActionTube {
            video_id: video.to_string(),
            class_id,
            score: 1.0,
            boxes: members.iter().map(|g| (g.frame_index, g.bbox)).collect(),
        });
    }
    Ok(out)
}

/// Spatio-temporal IoU: the per-frame box IoU summed over the frames covered
/// by either tube (0 where only one has a box), divided by that frame count.
pub fn tube_iou(a: &ActionTube, b: &ActionTube) -> f64 {
    let union: BTreeSet<usize> = a.boxes.iter().chain(&b.boxes).map(|x| x.0).collect();
    if union.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for &f in &union {
        if let (Some(x), Some(y)) = (a.box_at(f), b.box_at(f)) {
            sum += iou(x, y);
        }
    }
    sum / union.len() as f64
}

fn tube_order(a: &ActionTube, b: &ActionTube) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.video_id.cmp(&b.video_id))
        .then(a.start().cmp(&b.start()))
        .then(a.len().cmp(&b.len()))
        .then_with(|| {
            a.boxes
                .iter()
                .zip(&b.boxes)
                .map(|(x, y)| cmp_box(&x.1, &y.1))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// Video AP of one class: tubes ranked by score, each matching the still
/// unmatched ground-truth tube of its video with the highest tube IoU if that
/// exceeds `iou_threshold`.
pub fn video_ap(
    tubes: &[ActionTube],
    gt: &[ActionTube],
    class_id: usize,
    iou_threshold: f64,
) -> Result<PRCurve> {
    check_threshold(iou_threshold)?;
    let mut class_gt: Vec<&ActionTube> = gt.iter().filter(|t| t.class_id == class_id).collect();
    class_gt.sort_by(|a, b| tube_order(a, b));
    let mut by_video: BTreeMap<&str, Vec<&ActionTube>> = BTreeMap::new();
    for t in &class_gt {
        by_video.entry(t.video_id.as_str()).or_default().push(t);
    }
    let mut ranked: Vec<&ActionTube> = tubes.iter().filter(|t| t.class_id == class_id).collect();
    ranked.sort_by(|a, b| tube_order(a, b));

    let mut matched: BTreeSet<(&str, usize)> = BTreeSet::new();
    let mut is_tp = Vec::with_capacity(ranked.len());
    for t in ranked {
        let video = t.video_id.as_str();
        let mut best: Option<(usize, f64)> = None;
        if let Some(candidates) = by_video.get(video) {
            for (j, g) in candidates.iter().enumerate() {
                if matched.contains(&(video, j)) {
                    continue;
                }
                let o = tube_iou(t, g);
                if best.is_none_or(|(_, b)| o > b) {
                    best = Some((j, o));
                }
            }
        }
        match best {
            Some((j, o)) if o > iou_threshold => {
                matched.insert((video, j));
                is_tp.push(true);
            }
            _ => is_tp.push(false),
        }
    }
    Ok(PRCurve::from_matches(&is_tp, class_gt.len()))
}

/// Video AP for every class in `0..classes` and the mean over classes with
/// ground truth.
pub fn video_map(
    tubes: &[ActionTube],
    gt: &[ActionTube],
    classes: usize,
    iou_threshold: f64,
) -> Result<MeanAp> {
    let mut curves = Vec::with_capacity(classes);
    for k in 0..classes {
        let n = tubes.iter().filter(|t| t.class_id == k).count();
        curves.push((k, n, video_ap(tubes, gt, k, iou_threshold)?));
    }
    MeanAp::from_curves(curves)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(frame: usize, class_id: usize, score: f64, b: [f64; 4]) -> Detection {
        Detection {
            video_id: "v".into(),
            frame_index: frame,
            class_id,
            score,
            bbox: BBox::from(b),
        }
    }

    fn tube(boxes: &[(usize, [f64; 4])]) -> ActionTube {
        ActionTube {
            video_id: "v".into(),
            class_id: 0,
            score: 1.0,
            boxes: boxes.iter().map(|&(f, b)| (f, BBox::from(b))).collect(),
        }
    }

    #[test]
    fn smooth_object_forms_one_tube() {
        let dets: Vec<_> = (0..10)
            .map(|t| {
                let x = 2.0 * t as f64;
                det(t, 0, 0.9, [x, 0.0, x + 20.0, 20.0])
            })
            .collect();
        let tubes = link_tubes(&dets, &TubeLinkConfig::default()).unwrap();
        assert_eq!(tubes.len(), 1);
        assert_eq!(tubes[0].len(), 10);
        assert!((tubes[0].score - 0.9).abs() < 1e-12);
    }

    #[test]
    fn distant_objects_form_two_tubes() {
        let mut dets = Vec::new();
        for t in 0..5 {
            dets.push(det(t, 0, 0.8, [0.0, 0.0, 10.0, 10.0]));
            dets.push(det(t, 0, 0.7, [100.0, 100.0, 110.0, 110.0]));
        }
        assert_eq!(
            link_tubes(&dets, &TubeLinkConfig::default()).unwrap().len(),
            2
        );
    }

    #[test]
    fn gap_limit_closes_tubes() {
        let b = [0.0, 0.0, 10.0, 10.0];
        let cfg = TubeLinkConfig::default();
        assert_eq!(
            link_tubes(&[det(0, 0, 0.5, b), det(2, 0, 0.5, b)], &cfg)
                .unwrap()
                .len(),
            1
        );
        assert_eq!(
            link_tubes(&[det(0, 0, 0.5, b), det(3, 0, 0.5, b)], &cfg)
                .unwrap()
                .len(),
            2
        );
    }

    #[test]
    fn classes_never_share_a_tube() {
        let b = [0.0, 0.0, 10.0, 10.0];
        let tubes = link_tubes(
            &[det(0, 0, 0.5, b), det(1, 1, 0.5, b)],
            &TubeLinkConfig::default(),
        )
        .unwrap();
        assert_eq!(tubes.len(), 2);
    }

    #[test]
    fn tube_iou_examples() {
        let a = tube(&[(0, [0.0, 0.0, 2.0, 2.0]), (1, [0.0, 0.0, 2.0, 2.0])]);
        assert_eq!(tube_iou(&a, &a), 1.0);
        let late = tube(&[(5, [0.0, 0.0, 2.0, 2.0])]);
        assert_eq!(tube_iou(&a, &late), 0.0);
        // per-frame IoU 1/7 on frames 1 and 2, union {0, 1, 2}
        let x = tube(&[
            (0, [0.0, 0.0, 2.0, 2.0]),
            (1, [0.0, 0.0, 2.0, 2.0]),
            (2, [0.0, 0.0, 2.0, 2.0]),
        ]);
        let y = tube(&[(1, [1.0, 1.0, 3.0, 3.0]), (2, [1.0, 1.0, 3.0, 3.0])]);
        assert!((tube_iou(&x, &y) - 2.0 / 21.0).abs() < 1e-12);
        assert_eq!(tube_iou(&x, &y), tube_iou(&y, &x));
    }

    #[test]
    fn identical_tube_has_full_ap() {
        let a = tube(&[(0, [0.0, 0.0, 2.0, 2.0]), (1, [0.0, 0.0, 2.0, 2.0])]);
        let c = video_ap(std::slice::from_ref(&a), std::slice::from_ref(&a), 0, 0.5).unwrap();
        assert_eq!(c.ap, 1.0);
    }

    #[test]
    fn gt_tubes_group_instances() {
        let g = |f, inst, x: f64| GroundTruth {
            video_id: "v".into(),
            frame_index: f,
            instance_id: inst,
            class_id: 2,
            bbox: BBox::from([x, 0.0, x + 1.0, 1.0]),
        };
        let tubes = gt_tubes(&[g(1, 0, 0.0), g(0, 0, 0.0), g(0, 1, 5.0)]).unwrap();
        assert_eq!(tubes.len(), 2);
        assert_eq!(
            tubes[0].boxes.iter().map(|b| b.0).collect::<Vec<_>>(),
            vec![0, 1]
        );
        assert!(gt_tubes(&[g(0, 0, 0.0), g(0, 0, 1.0)]).is_err());
    }
}
