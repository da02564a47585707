//! Label assignment: which `(cell, anchor)` entries of the detection grid are
//! responsible for which ground truth.
//!
//! Two rules are provided for A/B comparison:
//!
//! * [`assign_plus`] matches each ground truth against the anchor *shapes* at
//!   its cell and marks every anchor whose shape IoU exceeds a threshold as
//!   positive, so one ground truth can own several entries.
//! * [`assign_yowo_baseline`] decodes the current predictions at the cell and
//!   keeps only the single predicted box with the highest IoU.
//!
//! Both only ever mark entries at the cell that contains the box center.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, AnchorSet, AnchorShape, BBox, CenterBox, GridCoord};
use crate::model::{GridShape, PredictionGrid};

/// One annotated object in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub video_id: String,
    pub frame_index: usize,
    pub instance_id: u32,
    pub class_id: usize,
    pub bbox: BBox,
}

impl GroundTruth {
    pub fn center(&self) -> CenterBox {
        self.bbox.to_center()
    }
}

/// Grid geometry shared by assignment, loss and decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub size: usize,
    pub stride: usize,
    pub classes: usize,
}

impl GridSpec {
    pub fn new(size: usize, stride: usize, classes: usize) -> Self {
        GridSpec {
            size,
            stride,
            classes,
        }
    }

    /// Side of the square input frame in pixels.
    pub fn input_size(&self) -> usize {
        self.size * self.stride
    }

    pub fn shape(&self, anchors: usize) -> GridShape {
        GridShape::new(self.size, anchors, self.classes)
    }
}

/// Training target for one positive entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositiveTarget {
    pub gt_index: usize,
    pub cell: GridCoord,
    pub anchor: usize,
    /// Ground-truth box the entry regresses to.
    pub bbox: BBox,
    /// `encode_box` of the ground truth against this entry's anchor.
    pub regression: [f64; 4],
    /// One-hot (or multi-hot) class target of length `C`.
    pub class_target: Vec<f64>,
    pub confidence: f64,
    /// IoU that decided the match (anchor shape IoU or predicted-box IoU).
    pub match_iou: f64,
}

/// Dense positive/negative labelling of an `S x S x B` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMap {
    shape: GridShape,
    /// Per entry: index into `positives`, or `None` for a negative.
    labels: Vec<Option<usize>>,
    positives: Vec<PositiveTarget>,
    num_gts: usize,
    collisions: usize,
    dropped: usize,
}

impl AssignmentMap {
    /// All-negative map.
    pub fn empty(shape: GridShape) -> Self {
        AssignmentMap {
            shape,
            labels: vec![None; shape.entries()],
            positives: Vec::new(),
            num_gts: 0,
            collisions: 0,
            dropped: 0,
        }
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    /// Positive target at a flat entry index, if any.
    pub fn positive(&self, entry: usize) -> Option<&PositiveTarget> {
        self.labels[entry].map(|i| &self.positives[i])
    }

    pub fn is_positive(&self, entry: usize) -> bool {
        self.labels[entry].is_some()
    }

    /// Positive targets with their flat entry indices, in entry order.
    pub fn positives(&self) -> impl Iterator<Item = (usize, &PositiveTarget)> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(move |(e, l)| l.map(|i| (e, &self.positives[i])))
    }

    pub fn num_gts(&self) -> usize {
        self.num_gts
    }

    /// Ground truths that shared a cell with another ground truth.
    pub fn collisions(&self) -> usize {
        self.collisions
    }

    /// Ground truths left without any positive because every anchor at
    /// their cell was already claimed.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    fn mark(&mut self, entry: usize, target: PositiveTarget) {
        debug_assert!(self.labels[entry].is_none());
        self.labels[entry] = Some(self.positives.len());
        self.positives.push(target);
    }
}

/// Number of positive entries.
pub fn count_positives(map: &AssignmentMap) -> usize {
    map.positives.len()
}

/// Shape IoU of a ground-truth box against every anchor, both co-centered.
pub fn anchor_ious(gt: &BBox, anchors: &AnchorSet) -> Vec<f64> {
    let shape = AnchorShape::new(gt.width(), gt.height());
    anchors
        .iter()
        .map(|a| geometry::shape_iou(shape, *a))
        .collect()
}

/// IoU of a ground-truth box against each decoded prediction at its cell.
pub fn prediction_ious(
    gt: &BBox,
    cell: GridCoord,
    preds: &PredictionGrid,
    anchors: &AnchorSet,
    stride: usize,
) -> Vec<f64> {
    let shape = preds.shape();
    (0..anchors.len())
        .map(|a| {
            let e = shape.entry_index(cell.grid_x, cell.grid_y, a);
            let b = geometry::decode_box(preds.raw_box(e), cell, anchors.get(a), stride);
            geometry::iou(&b, gt)
        })
        .collect()
}

fn validate(gts: &[GroundTruth], anchors: &AnchorSet, grid: &GridSpec) -> Result<Vec<GridCoord>> {
    if anchors.is_empty() {
        return Err(Error::invalid("anchor set is empty"));
    }
    if grid.size == 0 || grid.stride == 0 || grid.classes == 0 {
        return Err(Error::invalid(
            "grid size, stride and class count must be positive",
        ));
    }
    gts.iter()
        .enumerate()
        .map(|(i, gt)| {
            if !gt.bbox.is_valid() || gt.bbox.area() <= 0.0 {
                return Err(Error::invalid(format!("ground truth {i} has no area")));
            }
            if gt.class_id >= grid.classes {
                return Err(Error::invalid(format!(
                    "ground truth {i} has class {} but only {} classes exist",
                    gt.class_id, grid.classes
                )));
            }
            geometry::grid_cell(&gt.center(), grid.stride, grid.size)
        })
        .collect()
}

fn make_target(
    gt_index: usize,
    gt: &GroundTruth,
    cell: GridCoord,
    anchor: usize,
    anchors: &AnchorSet,
    grid: &GridSpec,
    match_iou: f64,
) -> Result<PositiveTarget> {
    let regression = geometry::encode_box(&gt.center(), cell, anchors.get(anchor), grid.stride)?;
    let mut class_target = vec![0.0; grid.classes];
    class_target[gt.class_id] = 1.0;
    Ok(PositiveTarget {
        gt_index,
        cell,
        anchor,
        bbox: gt.bbox,
        regression,
        class_target,
        confidence: 1.0,
        match_iou,
    })
}

/// Group ground-truth indices by cell, keeping first-seen cell order.
fn group_by_cell(cells: &[GridCoord]) -> Vec<(GridCoord, Vec<usize>)> {
    let mut groups: Vec<(GridCoord, Vec<usize>)> = Vec::new();
    for (i, c) in cells.iter().enumerate() {
        match groups.iter_mut().find(|(g, _)| g == c) {
            Some((_, members)) => members.push(i),
            None => groups.push((*c, vec![i])),
        }
    }
    groups
}

/// Anchor-shape assignment: every anchor at the ground truth's cell whose
/// co-centered shape IoU exceeds `threshold` becomes positive. A ground
/// truth with no anchor above threshold gets its best anchor.
///
/// When several ground truths share a cell, `(gt, anchor)` pairs are claimed
/// in descending IoU order (ties: lower gt index, then lower anchor index).
/// A ground truth that ends up with nothing falls back to its best unclaimed
/// anchor, or is dropped when none is left.
pub fn assign_plus(
    gts: &[GroundTruth],
    anchors: &AnchorSet,
    grid: &GridSpec,
    threshold: f64,
) -> Result<AssignmentMap> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!(
            "threshold {threshold} outside (0, 1)"
        )));
    }
    let cells = validate(gts, anchors, grid)?;
    let shape = grid.shape(anchors.len());
    let mut map = AssignmentMap::empty(shape);
    map.num_gts = gts.len();

    let ious: Vec<Vec<f64>> = gts.iter().map(|g| anchor_ious(&g.bbox, anchors)).collect();

    for (cell, members) in group_by_cell(&cells) {
        if members.len() > 1 {
            map.collisions += members.len();
        }
        let mut pairs: Vec<(usize, usize, f64)> = members
            .iter()
            .flat_map(|&g| (0..anchors.len()).map(move |a| (g, a)))
            .map(|(g, a)| (g, a, ious[g][a]))
            .collect();
        pairs.sort_by(|x, y| y.2.total_cmp(&x.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));

        let mut claimed = vec![false; anchors.len()];
        let mut owned = vec![0usize; gts.len()];
        for &(g, a, v) in &pairs {
            if v > threshold && !claimed[a] {
                claimed[a] = true;
                owned[g] += 1;
                let e = shape.entry_index(cell.grid_x, cell.grid_y, a);
                map.mark(e, make_target(g, &gts[g], cell, a, anchors, grid, v)?);
            }
        }
        // fallback: best unclaimed anchor, in member order
        for &g in &members {
            if owned[g] > 0 {
                continue;
            }
            let best = pairs
                .iter()
                .filter(|&&(pg, pa, _)| pg == g && !claimed[pa])
                .map(|&(_, a, v)| (a, v))
                .next();
            match best {
                Some((a, v)) => {
                    claimed[a] = true;
                    let e = shape.entry_index(cell.grid_x, cell.grid_y, a);
                    map.mark(e, make_target(g, &gts[g], cell, a, anchors, grid, v)?);
                }
                None => {
                    log::warn!(
                        "ground truth {g} dropped: all anchors at cell {cell:?} are claimed"
                    );
                    map.dropped += 1;
                }
            }
        }
    }
    Ok(map)
}

/// Prediction-driven assignment: at the ground truth's cell, only the decoded
/// prediction with the highest IoU against the ground truth is positive.
/// Ties go to the lowest anchor index.
///
/// Ground truths sharing a cell pick in descending order of their best IoU;
/// a later one takes its best unclaimed prediction.
pub fn assign_yowo_baseline(
    gts: &[GroundTruth],
    preds: &PredictionGrid,
    anchors: &AnchorSet,
    grid: &GridSpec,
) -> Result<AssignmentMap> {
    let cells = validate(gts, anchors, grid)?;
    let shape = grid.shape(anchors.len());
    if preds.shape() != shape {
        return Err(Error::shape(shape, preds.shape()));
    }
    let mut map = AssignmentMap::empty(shape);
    map.num_gts = gts.len();

    for (cell, members) in group_by_cell(&cells) {
        if members.len() > 1 {
            map.collisions += members.len();
        }
        let ious: Vec<Vec<f64>> = members
            .iter()
            .map(|&g| prediction_ious(&gts[g].bbox, cell, preds, anchors, grid.stride))
            .collect();
        let best = |v: &Vec<f64>| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut order: Vec<usize> = (0..members.len()).collect();
        order.sort_by(|&i, &j| best(&ious[j]).total_cmp(&best(&ious[i])).then(i.cmp(&j)));

        let mut claimed = vec![false; anchors.len()];
        for &k in &order {
            let g = members[k];
            // first index wins ties
            let pick =
                (0..anchors.len())
                    .filter(|&a| !claimed[a])
                    .fold(None::<(usize, f64)>, |acc, a| match acc {
                        Some((_, bv)) if bv >= ious[k][a] => acc,
                        _ => Some((a, ious[k][a])),
                    });
            match pick {
                Some((a, v)) => {
                    claimed[a] = true;
                    let e = shape.entry_index(cell.grid_x, cell.grid_y, a);
                    map.mark(e, make_target(g, &gts[g], cell, a, anchors, grid, v)?);
                }
                None => {
                    log::warn!(
                        "ground truth {g} dropped: all predictions at cell {cell:?} are claimed"
                    );
                    map.dropped += 1;
                }
            }
        }
    }
    Ok(map)
}
