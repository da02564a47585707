//! Hand-specified per-cell features computed directly from clip boxes. This
//! replaces a learned video backbone; it is rich enough for an affine head to
//! fit the synthetic data.
//!
//! Channel layout for `C` classes (`dim = 2C + 8`):
//!
//! | channels      | meaning                                                         |
//! |---------------|-----------------------------------------------------------------|
//! | `0..C`        | keyframe center occupancy per class                             |
//! | `C..2C`       | mean over frames of the object area fraction inside the cell   |
//! | `2C, 2C+1`    | logit of the centered object's fractional offset in the cell   |
//! | `2C+2, 2C+3`  | log of the centered object's width/height over the stride      |
//! | `2C+4, 2C+5`  | mean per-frame displacement of the centered object, in cells   |
//! | `2C+6, 2C+7`  | cell position in `[-1, 1]`                                      |

use crate::assignment::GridSpec;
use crate::data::SyntheticClip;
use crate::error::{Error, Result};
use crate::geometry::{self, logit, BBox};

/// Offsets are clamped to this margin before taking the logit.
const OFFSET_MARGIN: f64 = 0.02;

pub fn feature_dim(classes: usize) -> usize {
    2 * classes + 8
}

/// `S x S x dim` feature table.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    size: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(size: usize, dim: usize) -> Self {
        FeatureMap {
            size,
            dim,
            data: vec![0.0; size * size * dim],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cell(&self, grid_x: usize, grid_y: usize) -> &[f64] {
        let i = (grid_y * self.size + grid_x) * self.dim;
        &self.data[i..i + self.dim]
    }

    pub fn cell_mut(&mut self, grid_x: usize, grid_y: usize) -> &mut [f64] {
        let i = (grid_y * self.size + grid_x) * self.dim;
        &mut self.data[i..i + self.dim]
    }

    /// Cells in row-major order.
    pub fn cells(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

fn cell_box(grid_x: usize, grid_y: usize, stride: f64) -> BBox {
    BBox {
        x_min: grid_x as f64 * stride,
        y_min: grid_y as f64 * stride,
        x_max: (grid_x + 1) as f64 * stride,
        y_max: (grid_y + 1) as f64 * stride,
    }
}

/// Features for the keyframe (last frame) of `clip`.
pub fn extract_features(clip: &SyntheticClip, grid: &GridSpec) -> Result<FeatureMap> {
    let input = grid.input_size();
    if clip.width != input || clip.height != input {
        return Err(Error::shape(
            format!("{input}x{input} frames"),
            format!("{}x{}", clip.width, clip.height),
        ));
    }
    if clip.frames.is_empty() {
        return Err(Error::invalid("clip has no frames"));
    }
    let c = grid.classes;
    let s = grid.size;
    let stride = grid.stride as f64;
    let k = clip.frames.len() as f64;
    let mut map = FeatureMap::zeros(s, feature_dim(c));

    // temporal coverage
    for frame in &clip.frames {
        for obj in frame {
            if obj.class_id >= c {
                return Err(Error::invalid(format!(
                    "class {} out of range",
                    obj.class_id
                )));
            }
            let area = obj.bbox.area();
            if area <= 0.0 {
                continue;
            }
            let x0 = ((obj.bbox.x_min / stride).floor().max(0.0) as usize).min(s - 1);
            let x1 = ((obj.bbox.x_max / stride).ceil().max(0.0) as usize).min(s);
            let y0 = ((obj.bbox.y_min / stride).floor().max(0.0) as usize).min(s - 1);
            let y1 = ((obj.bbox.y_max / stride).ceil().max(0.0) as usize).min(s);
            for gy in y0..y1.max(y0 + 1) {
                for gx in x0..x1.max(x0 + 1) {
                    let frac = obj.bbox.intersection(&cell_box(gx, gy, stride)) / area;
                    map.cell_mut(gx, gy)[c + obj.class_id] += frac / k;
                }
            }
        }
    }
    for cell in map.data.chunks_exact_mut(feature_dim(c)) {
        for v in &mut cell[c..2 * c] {
            *v = v.min(1.0);
        }
    }

    // keyframe occupancy and geometry of the centered object
    let first = &clip.frames[0];
    for obj in clip.keyframe() {
        let center = obj.bbox.to_center();
        let cell = geometry::grid_cell(&center, grid.stride, s)?;
        let f = map.cell_mut(cell.grid_x, cell.grid_y);
        let occupied = f[..c].iter().any(|v| *v > 0.0);
        f[obj.class_id] += 1.0;
        if occupied {
            continue;
        }
        let clamp = |v: f64| v.clamp(OFFSET_MARGIN, 1.0 - OFFSET_MARGIN);
        f[2 * c] = logit(clamp(center.c_x / stride - cell.grid_x as f64));
        f[2 * c + 1] = logit(clamp(center.c_y / stride - cell.grid_y as f64));
        f[2 * c + 2] = (center.w / stride).ln();
        f[2 * c + 3] = (center.h / stride).ln();
        if clip.frames.len() > 1 {
            if let Some(start) = first.iter().find(|o| o.instance_id == obj.instance_id) {
                let c0 = start.bbox.to_center();
                let steps = (clip.frames.len() - 1) as f64;
                f[2 * c + 4] = (center.c_x - c0.c_x) / (steps * stride);
                f[2 * c + 5] = (center.c_y - c0.c_y) / (steps * stride);
            }
        }
    }

    // positional encoding
    let denom = (s.max(2) - 1) as f64;
    for gy in 0..s {
        for gx in 0..s {
            let f = map.cell_mut(gx, gy);
            f[2 * c + 6] = 2.0 * gx as f64 / denom - 1.0;
            f[2 * c + 7] = 2.0 * gy as f64 / denom - 1.0;
        }
    }
    Ok(map)
}
