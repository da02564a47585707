use std::collections::HashSet;

use rand::Rng;
use stadkit::geometry::BBox;

/// Unit pixels covered by an integer-corner box.
fn pixels(b: &BBox) -> HashSet<(i64, i64)> {
    let mut out = HashSet::new();
    for y in b.y_min as i64..b.y_max as i64 {
        for x in b.x_min as i64..b.x_max as i64 {
            out.insert((x, y));
        }
    }
    out
}

/// IoU and GIoU by counting pixels on a raster.
pub fn raster_iou_giou(a: &BBox, b: &BBox) -> (f64, f64) {
    let pa = pixels(a);
    let pb = pixels(b);
    let inter = pa.intersection(&pb).count() as f64;
    let union = pa.union(&pb).count() as f64;
    let hull = BBox::from([
        a.x_min.min(b.x_min),
        a.y_min.min(b.y_min),
        a.x_max.max(b.x_max),
        a.y_max.max(b.y_max),
    ]);
    let enclosing = pixels(&hull).len() as f64;
    let i = inter / union;
    (i, i - (enclosing - union) / enclosing)
}

pub fn random_int_box<R: Rng>(rng: &mut R) -> BBox {
    let x0 = rng.gen_range(0..30) as f64;
    let y0 = rng.gen_range(0..30) as f64;
    let w = rng.gen_range(1..20) as f64;
    let h = rng.gen_range(1..20) as f64;
    BBox::from([x0, y0, x0 + w, y0 + h])
}
