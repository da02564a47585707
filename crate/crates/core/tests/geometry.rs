mod common;

use common::bbox;
use common::raster::{random_int_box, raster_iou_giou};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stadkit::geometry::{
    decode_box, encode_box, giou, giou_with_grad, grid_cell, iou, AnchorShape, BBox, CenterBox,
    GridCoord,
};

#[test]
fn matches_raster_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let a = random_int_box(&mut rng);
        let b = random_int_box(&mut rng);
        let (ri, rg) = raster_iou_giou(&a, &b);
        assert!((iou(&a, &b) - ri).abs() < 1e-12, "{a:?} {b:?}");
        assert!((giou(&a, &b).unwrap() - rg).abs() < 1e-12, "{a:?} {b:?}");
    }
}

#[test]
fn hand_pair() {
    let a = bbox([0.0, 0.0, 2.0, 2.0]);
    let b = bbox([1.0, 1.0, 3.0, 3.0]);
    assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-9);
    assert!((giou(&a, &b).unwrap() + 5.0 / 63.0).abs() < 1e-9);
}

fn any_box() -> impl Strategy<Value = BBox> {
    (
        -100.0..100.0f64,
        -100.0..100.0f64,
        0.5..80.0f64,
        0.5..80.0f64,
    )
        .prop_map(|(x, y, w, h)| bbox([x, y, x + w, y + h]))
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in any_box(), b in any_box()) {
        let x = iou(&a, &b);
        prop_assert_eq!(x, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn giou_is_bounded_by_iou(a in any_box(), b in any_box()) {
        let g = giou(&a, &b).unwrap();
        prop_assert!(g <= iou(&a, &b) + 1e-12);
        prop_assert!(g > -1.0 && g <= 1.0);
        prop_assert!((g - giou(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert_eq!(giou_with_grad(&a, &b).unwrap().0, g);
    }

    #[test]
    fn iou_is_translation_invariant(a in any_box(), b in any_box(), dx in -50.0..50.0f64, dy in -50.0..50.0f64) {
        let moved = iou(&a.translate(dx, dy), &b.translate(dx, dy));
        prop_assert!((moved - iou(&a, &b)).abs() < 1e-9);
    }

    #[test]
    fn encode_inverts_decode(
        gx in 0usize..7, gy in 0usize..7,
        fx in 0.01..0.99f64, fy in 0.01..0.99f64,
        w in 4.0..300.0f64, h in 4.0..300.0f64,
        aw in 10.0..120.0f64, ah in 10.0..120.0f64,
    ) {
        let stride = 32;
        let cell = GridCoord::new(gx, gy);
        let c = CenterBox::new((gx as f64 + fx) * 32.0, (gy as f64 + fy) * 32.0, w, h);
        let anchor = AnchorShape::new(aw, ah);
        let raw = encode_box(&c, cell, anchor, stride).unwrap();
        let back = decode_box(raw, cell, anchor, stride);
        let want = c.to_bbox();
        for (p, q) in <[f64; 4]>::from(back).iter().zip(<[f64; 4]>::from(want).iter()) {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn grid_cell_contains_center(cx in 0.0..224.0f64, cy in 0.0..224.0f64) {
        let cell = grid_cell(&CenterBox::new(cx, cy, 1.0, 1.0), 32, 7).unwrap();
        prop_assert!(cell.grid_x < 7 && cell.grid_y < 7);
        prop_assert_eq!(cell.grid_x, (cx / 32.0).floor() as usize);
        prop_assert_eq!(cell.grid_y, (cy / 32.0).floor() as usize);
    }
}

#[test]
fn border_center_clamps_into_last_cell() {
    let cell = grid_cell(&CenterBox::new(224.0, 0.0, 2.0, 2.0), 32, 7).unwrap();
    assert_eq!(cell, GridCoord::new(6, 0));
}
