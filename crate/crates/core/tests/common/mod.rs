#![allow(dead_code)]

pub mod ap_oracle;
pub mod gradcheck;
pub mod raster;

use rand::Rng;
use stadkit::assignment::{GridSpec, GroundTruth};
use stadkit::geometry::{BBox, CenterBox};
use stadkit::model::{GridShape, PredictionGrid};

/// Ground truth with its center uniformly inside the `grid` frame and sides
/// in `[lo, hi]`.
pub fn random_gt<R: Rng>(
    rng: &mut R,
    grid: &GridSpec,
    class_id: usize,
    lo: f64,
    hi: f64,
) -> GroundTruth {
    let side = grid.input_size() as f64;
    let b = CenterBox::new(
        rng.gen_range(0.0..side),
        rng.gen_range(0.0..side),
        rng.gen_range(lo..hi),
        rng.gen_range(lo..hi),
    );
    GroundTruth {
        video_id: "v".into(),
        frame_index: 0,
        instance_id: 0,
        class_id,
        bbox: b.to_bbox(),
    }
}

pub fn random_preds<R: Rng>(rng: &mut R, shape: GridShape, spread: f64) -> PredictionGrid {
    let data = (0..shape.len())
        .map(|_| rng.gen_range(-spread..spread))
        .collect();
    PredictionGrid::from_vec(shape, data).unwrap()
}

pub fn bbox(b: [f64; 4]) -> BBox {
    BBox::from(b)
}

/// Central difference of `f` along every coordinate of `x`.
pub fn numeric_grad(x: &PredictionGrid, h: f64, f: impl Fn(&PredictionGrid) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.as_slice().len())
        .map(|i| {
            let orig = probe.as_slice()[i];
            probe.as_mut_slice()[i] = orig + h;
            let up = f(&probe);
            probe.as_mut_slice()[i] = orig - h;
            let down = f(&probe);
            probe.as_mut_slice()[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps coordinates whose true
/// derivative is zero from dividing round-off by round-off.
pub fn rel_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

pub fn max_rel_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_error(a, n, floor))
        .fold(0.0, f64::max)
}
