use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of the first class logit inside an entry; entries are laid out as
/// `[t_x, t_y, t_w, t_h, conf, class_0 .. class_{C-1}]`.
pub const CLASS_OFFSET: usize = 5;
pub const CONF_INDEX: usize = 4;

/// Static shape of a detection grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    /// Cells per side (`S`).
    pub size: usize,
    /// Anchors per cell (`B`).
    pub anchors: usize,
    /// Classes (`C`).
    pub classes: usize,
}

impl GridShape {
    pub fn new(size: usize, anchors: usize, classes: usize) -> Self {
        GridShape {
            size,
            anchors,
            classes,
        }
    }

    pub fn channels(&self) -> usize {
        CLASS_OFFSET + self.classes
    }

    /// Number of `(cell, anchor)` entries.
    pub fn entries(&self) -> usize {
        self.size * self.size * self.anchors
    }

    pub fn len(&self) -> usize {
        self.entries() * self.channels()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn entry_index(&self, grid_x: usize, grid_y: usize, anchor: usize) -> usize {
        (grid_y * self.size + grid_x) * self.anchors + anchor
    }

    /// Inverse of [`GridShape::entry_index`]: `(grid_x, grid_y, anchor)`.
    #[inline]
    pub fn entry_coords(&self, entry: usize) -> (usize, usize, usize) {
        let anchor = entry % self.anchors;
        let cell = entry / self.anchors;
        (cell % self.size, cell / self.size, anchor)
    }
}

impl std::fmt::Display for GridShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}x{}x{}x(5+{})",
            self.size, self.size, self.anchors, self.classes
        )
    }
}

/// Dense `S x S x B x (4 + 1 + C)` table of raw head outputs. Also used for
/// gradients with respect to those outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGrid {
    shape: GridShape,
    data: Vec<f64>,
}

impl PredictionGrid {
    pub fn zeros(shape: GridShape) -> Self {
        PredictionGrid {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn from_vec(shape: GridShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(shape.len(), data.len()));
        }
        Ok(PredictionGrid { shape, data })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Channels of one `(cell, anchor)` entry by flat entry index.
    #[inline]
    pub fn entry(&self, entry: usize) -> &[f64] {
        let c = self.shape.channels();
        &self.data[entry * c..(entry + 1) * c]
    }

    #[inline]
    pub fn entry_mut(&mut self, entry: usize) -> &mut [f64] {
        let c = self.shape.channels();
        &mut self.data[entry * c..(entry + 1) * c]
    }

    #[inline]
    pub fn at(&self, grid_x: usize, grid_y: usize, anchor: usize) -> &[f64] {
        self.entry(self.shape.entry_index(grid_x, grid_y, anchor))
    }

    #[inline]
    pub fn at_mut(&mut self, grid_x: usize, grid_y: usize, anchor: usize) -> &mut [f64] {
        let e = self.shape.entry_index(grid_x, grid_y, anchor);
        self.entry_mut(e)
    }

    pub fn raw_box(&self, entry: usize) -> [f64; 4] {
        let e = self.entry(entry);
        [e[0], e[1], e[2], e[3]]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|x| *x *= k);
    }

    pub fn add_assign(&mut self, other: &PredictionGrid) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(self.shape, other.shape));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }
}
