//! Box geometry: corner/center forms, IoU and GIoU, grid-cell mapping and the
//! sigmoid-offset / exp-scale box parameterization used by the detection head.
//!
//! All coordinates are pixels in a `W x H` frame. Every function here is pure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound applied to the log-scale raws before `exp`, so decoding never
/// produces an infinite box. `exp(50) * anchor` is about `5e21 * anchor`.
pub const MAX_LOG_SCALE: f64 = 50.0;

/// Fractional cell offsets are clamped to `[OFFSET_EPS, 1 - OFFSET_EPS]` when
/// encoding, which bounds the encoded offset logits to roughly +/-20.7.
pub const OFFSET_EPS: f64 = 1e-9;

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`] on `(0, 1)`.
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Axis-aligned box in corner form.
///
/// Serializes as `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox {
            x_min: v[0],
            y_min: v[1],
            x_max: v[2],
            y_max: v[3],
        }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

impl BBox {
    /// Checked constructor: coordinates must be finite and ordered.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if !b.is_valid() {
            return Err(Error::invalid(format!(
                "malformed box {:?}",
                <[f64; 4]>::from(b)
            )));
        }
        Ok(b)
    }

    pub fn is_finite(&self) -> bool {
        self.x_min.is_finite()
            && self.y_min.is_finite()
            && self.x_max.is_finite()
            && self.y_max.is_finite()
    }

    /// Finite and `min <= max` on both axes.
    pub fn is_valid(&self) -> bool {
        self.is_finite() && self.x_min <= self.x_max && self.y_min <= self.y_max
    }

    #[inline]
    pub fn width(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0)
    }

    #[inline]
    pub fn height(&self) -> f64 {
        (self.y_max - self.y_min).max(0.0)
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn to_center(&self) -> CenterBox {
        CenterBox {
            c_x: 0.5 * (self.x_min + self.x_max),
            c_y: 0.5 * (self.y_min + self.y_max),
            w: self.x_max - self.x_min,
            h: self.y_max - self.y_min,
        }
    }

    /// Clip to the `[0, width] x [0, height]` frame.
    pub fn clip(&self, width: f64, height: f64) -> BBox {
        let x_min = self.x_min.clamp(0.0, width);
        let y_min = self.y_min.clamp(0.0, height);
        BBox {
            x_min,
            y_min,
            x_max: self.x_max.clamp(x_min, width),
            y_max: self.y_max.clamp(y_min, height),
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let iw = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let ih = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        iw * ih
    }

    /// Smallest box containing both.
    pub fn enclosing(&self, other: &BBox) -> BBox {
        BBox {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }
}

/// Box in center form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterBox {
    pub c_x: f64,
    pub c_y: f64,
    pub w: f64,
    pub h: f64,
}

impl CenterBox {
    pub fn new(c_x: f64, c_y: f64, w: f64, h: f64) -> Self {
        CenterBox { c_x, c_y, w, h }
    }

    pub fn to_bbox(&self) -> BBox {
        BBox {
            x_min: self.c_x - 0.5 * self.w,
            y_min: self.c_y - 0.5 * self.h,
            x_max: self.c_x + 0.5 * self.w,
            y_max: self.c_y + 0.5 * self.h,
        }
    }
}

/// Cell index on an `size x size` grid with `stride` pixels per cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridCoord {
    pub grid_x: usize,
    pub grid_y: usize,
}

impl GridCoord {
    pub fn new(grid_x: usize, grid_y: usize) -> Self {
        GridCoord { grid_x, grid_y }
    }
}

/// Prior box shape in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorShape {
    pub w: f64,
    pub h: f64,
}

impl AnchorShape {
    pub fn new(w: f64, h: f64) -> Self {
        AnchorShape { w, h }
    }
}

/// The `B` prior shapes attached to every grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct AnchorSet {
    shapes: Vec<AnchorShape>,
}

impl AnchorSet {
    pub fn new(shapes: Vec<AnchorShape>) -> Result<Self> {
        if shapes.is_empty() {
            return Err(Error::invalid("anchor set is empty"));
        }
        for (i, a) in shapes.iter().enumerate() {
            if !(a.w.is_finite() && a.h.is_finite() && a.w > 0.0 && a.h > 0.0) {
                return Err(Error::invalid(format!(
                    "anchor {i} has non-positive shape ({}, {})",
                    a.w, a.h
                )));
            }
        }
        Ok(AnchorSet { shapes })
    }

    /// Five shapes sized for a 224x224 input with stride 32: one small square,
    /// a tall and a wide rectangle, a medium and a large square.
    pub fn default_set() -> Self {
        AnchorSet::new(vec![
            AnchorShape::new(24.0, 24.0),
            AnchorShape::new(36.0, 60.0),
            AnchorShape::new(60.0, 36.0),
            AnchorShape::new(64.0, 64.0),
            AnchorShape::new(104.0, 104.0),
        ])
        .expect("default anchors are valid")
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn get(&self, i: usize) -> AnchorShape {
        self.shapes[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &AnchorShape> {
        self.shapes.iter()
    }
}

impl TryFrom<Vec<[f64; 2]>> for AnchorSet {
    type Error = Error;

    fn try_from(v: Vec<[f64; 2]>) -> Result<Self> {
        AnchorSet::new(v.into_iter().map(|[w, h]| AnchorShape::new(w, h)).collect())
    }
}

impl From<AnchorSet> for Vec<[f64; 2]> {
    fn from(a: AnchorSet) -> Self {
        a.shapes.iter().map(|s| [s.w, s.h]).collect()
    }
}

/// Cell containing a box center: `floor(c / stride)` per axis, clamped to
/// `[0, size - 1]` so centers on the right/bottom border stay assignable.
pub fn grid_cell(center: &CenterBox, stride: usize, size: usize) -> Result<GridCoord> {
    if stride == 0 || size == 0 {
        return Err(Error::invalid("stride and grid size must be positive"));
    }
    if !(center.c_x.is_finite() && center.c_y.is_finite()) {
        return Err(Error::invalid(format!(
            "non-finite center ({}, {})",
            center.c_x, center.c_y
        )));
    }
    let s = stride as f64;
    let to_index = |c: f64| -> usize {
        let g = (c / s).floor();
        if g <= 0.0 {
            0
        } else {
            (g as usize).min(size - 1)
        }
    };
    Ok(GridCoord {
        grid_x: to_index(center.c_x),
        grid_y: to_index(center.c_y),
    })
}

/// Intersection over union. Returns 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// IoU of two shapes placed on the same center.
pub fn shape_iou(a: AnchorShape, b: AnchorShape) -> f64 {
    let inter = a.w.min(b.w) * a.h.min(b.h);
    let union = a.w * a.h + b.w * b.h - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generalized IoU: `IoU - (area(C) - area(U)) / area(C)` with `C` the
/// smallest enclosing box. Fails when the enclosing box has zero area.
pub fn giou(a: &BBox, b: &BBox) -> Result<f64> {
    giou_with_grad(a, b).map(|(g, _)| g)
}

/// GIoU together with its gradient with respect to the corners
/// `[x_min, y_min, x_max, y_max]` of the first box.
///
/// Where `min`/`max` switch ownership between the boxes, the branch taken by
/// the comparison decides the subgradient.
pub fn giou_with_grad(a: &BBox, b: &BBox) -> Result<(f64, [f64; 4])> {
    let (ax1, ay1, ax2, ay2) = (a.x_min, a.y_min, a.x_max, a.y_max);
    let (bx1, by1, bx2, by2) = (b.x_min, b.y_min, b.x_max, b.y_max);

    let aw = ax2 - ax1;
    let ah = ay2 - ay1;
    let area_a = aw * ah;
    let area_b = (bx2 - bx1) * (by2 - by1);

    // intersection extents and their partials w.r.t. a's corners
    let (ix1, dix1) = if ax1 > bx1 { (ax1, 1.0) } else { (bx1, 0.0) };
    let (ix2, dix2) = if ax2 < bx2 { (ax2, 1.0) } else { (bx2, 0.0) };
    let (iy1, diy1) = if ay1 > by1 { (ay1, 1.0) } else { (by1, 0.0) };
    let (iy2, diy2) = if ay2 < by2 { (ay2, 1.0) } else { (by2, 0.0) };
    let iw = ix2 - ix1;
    let ih = iy2 - iy1;
    let overlapping = iw > 0.0 && ih > 0.0;
    let inter = if overlapping { iw * ih } else { 0.0 };

    // enclosing extents
    let (cx1, dcx1) = if ax1 < bx1 { (ax1, 1.0) } else { (bx1, 0.0) };
    let (cx2, dcx2) = if ax2 > bx2 { (ax2, 1.0) } else { (bx2, 0.0) };
    let (cy1, dcy1) = if ay1 < by1 { (ay1, 1.0) } else { (by1, 0.0) };
    let (cy2, dcy2) = if ay2 > by2 { (ay2, 1.0) } else { (by2, 0.0) };
    let cw = cx2 - cx1;
    let ch = cy2 - cy1;
    let area_c = cw * ch;
    if area_c.is_nan() || area_c <= 0.0 {
        return Err(Error::invalid(
            "GIoU undefined: enclosing box has zero area",
        ));
    }

    let union = area_a + area_b - inter;
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    let value = iou - (area_c - union) / area_c;

    // d(area_a)/d[x1, y1, x2, y2]
    let d_area_a = [-ah, -aw, ah, aw];
    // d(inter)/d[x1, y1, x2, y2]
    let d_inter = if overlapping {
        [-dix1 * ih, -diy1 * iw, dix2 * ih, diy2 * iw]
    } else {
        [0.0; 4]
    };
    // d(area_c)/d[x1, y1, x2, y2]
    let d_area_c = [-dcx1 * ch, -dcy1 * cw, dcx2 * ch, dcy2 * cw];

    // value = inter/union + union/area_c - 1
    let mut grad = [0.0; 4];
    if union > 0.0 {
        for k in 0..4 {
            let d_union = d_area_a[k] - d_inter[k];
            grad[k] = d_inter[k] / union - inter * d_union / (union * union) + d_union / area_c
                - union * d_area_c[k] / (area_c * area_c);
        }
    }
    Ok((value, grad))
}

/// Decoded box plus the partial derivatives of its corners with respect to
/// the four raws, as needed for back-propagation through the decoder.
#[derive(Debug, Clone, Copy)]
pub struct DecodedBox {
    pub bbox: BBox,
    /// `d c_x / d t_x`, `d c_y / d t_y`, `d w / d t_w`, `d h / d t_h`.
    pub d_center_x: f64,
    pub d_center_y: f64,
    pub d_width: f64,
    pub d_height: f64,
}

impl DecodedBox {
    /// Chain a gradient on the corners `[x_min, y_min, x_max, y_max]` back to
    /// the raws `[t_x, t_y, t_w, t_h]`.
    pub fn backprop(&self, d_corners: [f64; 4]) -> [f64; 4] {
        let [gx1, gy1, gx2, gy2] = d_corners;
        [
            (gx1 + gx2) * self.d_center_x,
            (gy1 + gy2) * self.d_center_y,
            0.5 * (gx2 - gx1) * self.d_width,
            0.5 * (gy2 - gy1) * self.d_height,
        ]
    }
}

/// [`decode_box`] with derivatives.
pub fn decode_box_with_grad(
    raw: [f64; 4],
    cell: GridCoord,
    anchor: AnchorShape,
    stride: usize,
) -> DecodedBox {
    let s = stride as f64;
    let sx = sigmoid(raw[0]);
    let sy = sigmoid(raw[1]);
    let tw = raw[2].min(MAX_LOG_SCALE);
    let th = raw[3].min(MAX_LOG_SCALE);
    let w = anchor.w * tw.exp();
    let h = anchor.h * th.exp();
    let center = CenterBox {
        c_x: (sx + cell.grid_x as f64) * s,
        c_y: (sy + cell.grid_y as f64) * s,
        w,
        h,
    };
    DecodedBox {
        bbox: center.to_bbox(),
        d_center_x: s * sx * (1.0 - sx),
        d_center_y: s * sy * (1.0 - sy),
        d_width: if raw[2] < MAX_LOG_SCALE { w } else { 0.0 },
        d_height: if raw[3] < MAX_LOG_SCALE { h } else { 0.0 },
    }
}

/// Raw head outputs `(t_x, t_y, t_w, t_h)` to a box:
/// `c = (sigmoid(t) + grid) * stride`, `w = anchor_w * exp(t_w)`.
///
/// Log-scale raws above [`MAX_LOG_SCALE`] saturate.
pub fn decode_box(raw: [f64; 4], cell: GridCoord, anchor: AnchorShape, stride: usize) -> BBox {
    decode_box_with_grad(raw, cell, anchor, stride).bbox
}

/// Inverse of [`decode_box`].
///
/// The center must lie in the closed cell; offsets on the cell border are
/// clamped by [`OFFSET_EPS`] so the logits stay finite.
pub fn encode_box(
    b: &CenterBox,
    cell: GridCoord,
    anchor: AnchorShape,
    stride: usize,
) -> Result<[f64; 4]> {
    if !(b.w > 0.0 && b.h > 0.0 && b.w.is_finite() && b.h.is_finite()) {
        return Err(Error::invalid(format!("zero-size box ({} x {})", b.w, b.h)));
    }
    if !(anchor.w > 0.0 && anchor.h > 0.0) {
        return Err(Error::invalid("anchor must have positive size"));
    }
    let s = stride as f64;
    let fx = b.c_x / s - cell.grid_x as f64;
    let fy = b.c_y / s - cell.grid_y as f64;
    if !((0.0..=1.0).contains(&fx) && (0.0..=1.0).contains(&fy)) {
        return Err(Error::invalid(format!(
            "center ({}, {}) lies outside cell ({}, {})",
            b.c_x, b.c_y, cell.grid_x, cell.grid_y
        )));
    }
    let clamp = |f: f64| f.clamp(OFFSET_EPS, 1.0 - OFFSET_EPS);
    Ok([
        logit(clamp(fx)),
        logit(clamp(fy)),
        (b.w / anchor.w).ln(),
        (b.h / anchor.h).ln(),
    ])
}
