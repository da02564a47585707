//! Analytic loss gradients against central finite differences.
//!
//! GIoU is piecewise smooth: its branches switch where a predicted corner
//! meets a ground-truth corner on the same axis. Instances with any such pair
//! closer than `CORNER_BAND` pixels are redrawn. Smooth-L1 instances with a
//! residual within `KINK_BAND` of its knee at 1 are redrawn likewise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stadkit::assignment::{assign_plus, AssignmentMap, GridSpec};
use stadkit::geometry::{decode_box, sigmoid, AnchorSet};
use stadkit::loss::{
    confidence_loss, focal_cls_loss, giou_loss, smooth_l1_loss, total_loss, LossConfig,
    LossWeights, RegressionLoss,
};
use stadkit::model::PredictionGrid;

use super::{max_rel_error, numeric_grad, random_gt, random_preds};

pub const INSTANCES: u64 = 120;
pub const H: f64 = 1e-5;
pub const FLOOR: f64 = 1e-3;
pub const TOL: f64 = 1e-4;
pub const CORNER_BAND: f64 = 0.05;
pub const KINK_BAND: f64 = 1e-3;

pub fn grid() -> GridSpec {
    GridSpec::new(3, 32, 3)
}

pub fn weights() -> LossWeights {
    LossWeights {
        lambda_act: 5.0,
        lambda_noact: 1.0,
        lambda_cls: 1.3,
        lambda_coord: 5.0,
        focal_gamma: 2.0,
        focal_alpha: 0.25,
    }
}

fn random_map(rng: &mut ChaCha8Rng, anchors: &AnchorSet) -> AssignmentMap {
    let g = grid();
    let n = rng.gen_range(1..=3);
    let gts: Vec<_> = (0..n)
        .map(|_| {
            let class_id = rng.gen_range(0..g.classes);
            random_gt(rng, &g, class_id, 10.0, 90.0)
        })
        .collect();
    assign_plus(&gts, anchors, &g, 0.5).unwrap()
}

fn near_giou_kink(preds: &PredictionGrid, map: &AssignmentMap, anchors: &AnchorSet) -> bool {
    map.positives().any(|(e, t)| {
        let p = decode_box(
            preds.raw_box(e),
            t.cell,
            anchors.get(t.anchor),
            grid().stride,
        );
        let g = t.bbox;
        let close = |a: [f64; 2], b: [f64; 2]| {
            a.iter()
                .any(|x| b.iter().any(|y| (x - y).abs() < CORNER_BAND))
        };
        close([p.x_min, p.x_max], [g.x_min, g.x_max])
            || close([p.y_min, p.y_max], [g.y_min, g.y_max])
    })
}

fn near_smooth_l1_kink(preds: &PredictionGrid, map: &AssignmentMap) -> bool {
    map.positives().any(|(e, t)| {
        let r = preds.raw_box(e);
        let d = [
            sigmoid(r[0]) - sigmoid(t.regression[0]),
            sigmoid(r[1]) - sigmoid(t.regression[1]),
            r[2] - t.regression[2],
            r[3] - t.regression[3],
        ];
        d.iter().any(|v| (v.abs() - 1.0).abs() < KINK_BAND)
    })
}

/// Draws `INSTANCES` (preds, map) pairs, redrawing predictions that land in
/// an exclusion band, and returns the worst relative error of `check`.
fn sweep(
    seed: u64,
    reject: impl Fn(&PredictionGrid, &AssignmentMap, &AnchorSet) -> bool,
    check: impl Fn(&PredictionGrid, &AssignmentMap, &AnchorSet) -> f64,
) -> f64 {
    let anchors = AnchorSet::default_set();
    let mut worst = 0.0f64;
    for i in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 1000 + i);
        let map = random_map(&mut rng, &anchors);
        let mut preds = random_preds(&mut rng, map.shape(), 2.0);
        while reject(&preds, &map, &anchors) {
            preds = random_preds(&mut rng, map.shape(), 2.0);
        }
        worst = worst.max(check(&preds, &map, &anchors));
    }
    worst
}

pub fn confidence_worst(seed: u64) -> f64 {
    let w = weights();
    sweep(
        seed,
        |_, _, _| false,
        |p, m, _| {
            let a = confidence_loss(p, m, &w).unwrap();
            let n = numeric_grad(p, H, |x| confidence_loss(x, m, &w).unwrap().value);
            max_rel_error(a.grad.as_slice(), &n, FLOOR)
        },
    )
}

pub fn focal_worst(seed: u64) -> f64 {
    let w = weights();
    sweep(
        seed,
        |_, _, _| false,
        |p, m, _| {
            let a = focal_cls_loss(p, m, &w).unwrap();
            let n = numeric_grad(p, H, |x| focal_cls_loss(x, m, &w).unwrap().value);
            max_rel_error(a.grad.as_slice(), &n, FLOOR)
        },
    )
}

pub fn giou_worst(seed: u64) -> f64 {
    let w = weights();
    let stride = grid().stride;
    sweep(seed, near_giou_kink, |p, m, anchors| {
        let a = giou_loss(p, m, anchors, stride, &w).unwrap();
        let n = numeric_grad(p, H, |x| {
            giou_loss(x, m, anchors, stride, &w).unwrap().value
        });
        max_rel_error(a.grad.as_slice(), &n, FLOOR)
    })
}

pub fn smooth_l1_worst(seed: u64) -> f64 {
    let w = weights();
    sweep(
        seed,
        |p, m, _| near_smooth_l1_kink(p, m),
        |p, m, _| {
            let a = smooth_l1_loss(p, m, &w).unwrap();
            let n = numeric_grad(p, H, |x| smooth_l1_loss(x, m, &w).unwrap().value);
            max_rel_error(a.grad.as_slice(), &n, FLOOR)
        },
    )
}

/// Worst error of `total_loss` over batches of one to three frames.
pub fn total_loss_worst(regression: RegressionLoss, seed: u64) -> f64 {
    let anchors = AnchorSet::default_set();
    let stride = grid().stride;
    let config = LossConfig {
        weights: weights(),
        regression,
        ..Default::default()
    };
    let mut worst = 0.0f64;
    for i in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 1000 + i);
        let batch = rng.gen_range(1..=3);
        let maps: Vec<_> = (0..batch).map(|_| random_map(&mut rng, &anchors)).collect();
        let preds: Vec<_> = maps
            .iter()
            .map(|m| loop {
                let p = random_preds(&mut rng, m.shape(), 2.0);
                if !near_giou_kink(&p, m, &anchors) && !near_smooth_l1_kink(&p, m) {
                    break p;
                }
            })
            .collect();
        let out = total_loss(&preds, &maps, &anchors, stride, &config).unwrap();
        for b in 0..batch {
            let n = numeric_grad(&preds[b], H, |x| {
                let mut probe = preds.clone();
                probe[b] = x.clone();
                total_loss(&probe, &maps, &anchors, stride, &config)
                    .unwrap()
                    .total
            });
            worst = worst.max(max_rel_error(out.gradients[b].as_slice(), &n, FLOOR));
        }
    }
    worst
}
