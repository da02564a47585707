//! Frame-AP oracle. Every box is 10x10 on the row y in [0, 10], so IoU is a
//! function of the horizontal offset alone and the oracle never calls the
//! library geometry.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stadkit::assignment::GroundTruth;
use stadkit::eval::frame_ap;
use stadkit::geometry::BBox;
use stadkit::postprocess::Detection;

pub const GT_SLOTS: [f64; 3] = [0.0, 10.0, 40.0];
/// Offsets from slot 0 give IoU levels 1, 0.6, 1/3, 1/7 and 0.
pub const DET_X: [f64; 8] = [0.0, 2.5, 5.0, 7.5, 10.0, 40.0, 45.0, 100.0];
pub const SCORES: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
pub const THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct D {
    pub frame: usize,
    pub x: f64,
    pub score: f64,
}

pub fn row_iou(a: f64, b: f64) -> f64 {
    let overlap = ((a.min(b) + 10.0) - a.max(b)).max(0.0);
    overlap / (20.0 - overlap)
}

/// Independent rendering of greedy matching and all-point AP.
pub fn oracle_ap(dets: &[D], gts: &[(usize, f64)], threshold: f64) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (dets[i], dets[j]);
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.x.partial_cmp(&b.x).unwrap())
            .then(a.frame.cmp(&b.frame))
    });
    let mut used = vec![false; gts.len()];
    let mut tp_count = Vec::new();
    let mut tp = 0usize;
    for &i in &order {
        let d = dets[i];
        let mut best: Option<usize> = None;
        for (j, &(f, gx)) in gts.iter().enumerate() {
            if f != d.frame || used[j] {
                continue;
            }
            if best.is_none_or(|b| row_iou(d.x, gx) > row_iou(d.x, gts[b].1)) {
                best = Some(j);
            }
        }
        if let Some(b) = best {
            if row_iou(d.x, gts[b].1) > threshold {
                used[b] = true;
                tp += 1;
            }
        }
        tp_count.push(tp);
    }
    let precision: Vec<f64> = tp_count
        .iter()
        .enumerate()
        .map(|(k, &t)| t as f64 / (k + 1) as f64)
        .collect();
    let mut sum = 0.0;
    for level in 1..=gts.len() {
        let best = tp_count
            .iter()
            .zip(&precision)
            .filter(|(&t, _)| t >= level)
            .map(|(_, &p)| p)
            .fold(0.0, f64::max);
        sum += best;
    }
    sum / gts.len() as f64
}

pub fn to_inputs(dets: &[D], gts: &[(usize, f64)]) -> (Vec<Detection>, Vec<GroundTruth>) {
    let d = dets
        .iter()
        .map(|d| Detection {
            video_id: "v".into(),
            frame_index: d.frame,
            class_id: 0,
            score: d.score,
            bbox: BBox::from([d.x, 0.0, d.x + 10.0, 10.0]),
        })
        .collect();
    // instance ids follow the slot order, which is also the canonical order
    let g = gts
        .iter()
        .enumerate()
        .map(|(i, &(f, x))| GroundTruth {
            video_id: "v".into(),
            frame_index: f,
            instance_id: i as u32,
            class_id: 0,
            bbox: BBox::from([x, 0.0, x + 10.0, 10.0]),
        })
        .collect();
    (d, g)
}

/// Whether the library agrees with the oracle bit for bit.
pub fn agrees(dets: &[D], gts: &[(usize, f64)]) -> bool {
    let (d, g) = to_inputs(dets, gts);
    let curve = frame_ap(&d, &g, 0, THRESHOLD).unwrap();
    curve.ap == oracle_ap(dets, gts, THRESHOLD) && curve.no_ground_truth == gts.is_empty()
}

/// Detections and (frame, x) ground truths of one instance.
pub type Instance = (Vec<D>, Vec<(usize, f64)>);

/// Number of checked instances and the first disagreement, if any.
pub type Sweep = (usize, Option<Instance>);

/// Every instance with up to three detections on one frame against each
/// prefix of the gt slots.
pub fn exhaustive() -> Sweep {
    let options: Vec<D> = DET_X
        .iter()
        .flat_map(|&x| SCORES.iter().map(move |&score| D { frame: 0, x, score }))
        .collect();
    let mut checked = 0;
    let mut check = |dets: &[D], gts: &[(usize, f64)]| -> Option<Instance> {
        checked += 1;
        (!agrees(dets, gts)).then(|| (dets.to_vec(), gts.to_vec()))
    };
    for n_gt in 0..=3 {
        let gts: Vec<(usize, f64)> = GT_SLOTS[..n_gt].iter().map(|&x| (0, x)).collect();
        if let Some(bad) = check(&[], &gts) {
            return (checked, Some(bad));
        }
        for &a in &options {
            if let Some(bad) = check(&[a], &gts) {
                return (checked, Some(bad));
            }
            for &b in &options {
                if let Some(bad) = check(&[a, b], &gts) {
                    return (checked, Some(bad));
                }
                for &c in &options {
                    if let Some(bad) = check(&[a, b, c], &gts) {
                        return (checked, Some(bad));
                    }
                }
            }
        }
    }
    (checked, None)
}

/// Seeded instances with four or five detections spread over two frames.
pub fn sampled(seed: u64, count: usize) -> Sweep {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..count {
        let n_gt = rng.gen_range(0..=3);
        let gts: Vec<(usize, f64)> = (0..n_gt)
            .map(|k| (rng.gen_range(0..2), GT_SLOTS[k]))
            .collect();
        let n_det = rng.gen_range(4..=5);
        let dets: Vec<D> = (0..n_det)
            .map(|_| D {
                frame: rng.gen_range(0..2),
                x: *DET_X.choose(&mut rng).unwrap(),
                score: *SCORES.choose(&mut rng).unwrap(),
            })
            .collect();
        if !agrees(&dets, &gts) {
            return (i + 1, Some((dets, gts)));
        }
    }
    (count, None)
}
