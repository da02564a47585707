use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::features::FeatureMap;
use super::prediction::{GridShape, PredictionGrid};
use crate::error::{Error, Result};

const INIT_SCALE: f64 = 0.01;

/// Affine map applied independently to every cell's feature vector,
/// producing the `B * (5 + C)` raw outputs of that cell.
///
/// Parameters are stored flat: the `feature_dim x out_dim` weight matrix in
/// row-major order, followed by the `out_dim` bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyHead {
    feature_dim: usize,
    shape: GridShape,
    params: Vec<f64>,
}

impl ToyHead {
    /// Weights uniform in `[-0.01, 0.01]`, zero bias.
    pub fn new(feature_dim: usize, shape: GridShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = shape.anchors * shape.channels();
        let mut params: Vec<f64> = (0..feature_dim * out)
            .map(|_| rng.gen_range(-INIT_SCALE..=INIT_SCALE))
            .collect();
        params.extend(std::iter::repeat_n(0.0, out));
        ToyHead {
            feature_dim,
            shape,
            params,
        }
    }

    pub fn from_params(feature_dim: usize, shape: GridShape, params: Vec<f64>) -> Result<Self> {
        let expected = Self::param_count_for(feature_dim, shape);
        if params.len() != expected {
            return Err(Error::shape(expected, params.len()));
        }
        Ok(ToyHead {
            feature_dim,
            shape,
            params,
        })
    }

    pub fn param_count_for(feature_dim: usize, shape: GridShape) -> usize {
        let out = shape.anchors * shape.channels();
        feature_dim * out + out
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn out_dim(&self) -> usize {
        self.shape.anchors * self.shape.channels()
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check(&self, features: &FeatureMap) -> Result<()> {
        if features.dim() != self.feature_dim || features.size() != self.shape.size {
            return Err(Error::shape(
                format!("{0}x{0}x{1} features", self.shape.size, self.feature_dim),
                format!("{0}x{0}x{1}", features.size(), features.dim()),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, features: &FeatureMap) -> Result<PredictionGrid> {
        self.check(features)?;
        let out = self.out_dim();
        let (weights, bias) = self.params.split_at(self.feature_dim * out);
        let mut grid = PredictionGrid::zeros(self.shape);
        for (dst, feat) in grid
            .as_mut_slice()
            .chunks_exact_mut(out)
            .zip(features.cells())
        {
            dst.copy_from_slice(bias);
            for (f, row) in feat.iter().zip(weights.chunks_exact(out)) {
                if *f == 0.0 {
                    continue;
                }
                for (d, w) in dst.iter_mut().zip(row) {
                    *d += f * w;
                }
            }
        }
        Ok(grid)
    }

    /// Accumulate into `param_grad` the gradient of a scalar loss with respect
    /// to the parameters, given its gradient `output_grad` with respect to
    /// the head outputs for `features`.
    pub fn backward(
        &self,
        features: &FeatureMap,
        output_grad: &PredictionGrid,
        param_grad: &mut [f64],
    ) -> Result<()> {
        self.check(features)?;
        if output_grad.shape() != self.shape {
            return Err(Error::shape(self.shape, output_grad.shape()));
        }
        if param_grad.len() != self.params.len() {
            return Err(Error::shape(self.params.len(), param_grad.len()));
        }
        let out = self.out_dim();
        let (gw, gb) = param_grad.split_at_mut(self.feature_dim * out);
        for (g, feat) in output_grad
            .as_slice()
            .chunks_exact(out)
            .zip(features.cells())
        {
            for (b, v) in gb.iter_mut().zip(g) {
                *b += v;
            }
            for (f, row) in feat.iter().zip(gw.chunks_exact_mut(out)) {
                if *f == 0.0 {
                    continue;
                }
                for (w, v) in row.iter_mut().zip(g) {
                    *w += f * v;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features(size: usize, dim: usize, seed: u64) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = FeatureMap::zeros(size, dim);
        for y in 0..size {
            for x in 0..size {
                for v in f.cell_mut(x, y) {
                    *v = rng.gen_range(-1.0..1.0);
                }
            }
        }
        f
    }

    #[test]
    fn zero_params_give_zero_grid() {
        let shape = GridShape::new(3, 2, 2);
        let n = ToyHead::param_count_for(4, shape);
        assert_eq!(n, 4 * 2 * 7 + 2 * 7);
        let head = ToyHead::from_params(4, shape, vec![0.0; n]).unwrap();
        let out = head.forward(&features(3, 4, 1)).unwrap();
        assert!(out.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_is_linear_without_bias() {
        let shape = GridShape::new(3, 2, 2);
        let mut head = ToyHead::new(4, shape, 9);
        let wlen = 4 * head.out_dim();
        head.params_mut()[wlen..].iter_mut().for_each(|b| *b = 0.0);
        let mut doubled = head.clone();
        doubled.params_mut().iter_mut().for_each(|p| *p *= 2.0);
        let f = features(3, 4, 2);
        let a = head.forward(&f).unwrap();
        let b = doubled.forward(&f).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((2.0 * x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn init_is_seeded() {
        let shape = GridShape::new(7, 5, 4);
        assert_eq!(ToyHead::new(16, shape, 3), ToyHead::new(16, shape, 3));
        assert_ne!(ToyHead::new(16, shape, 3), ToyHead::new(16, shape, 4));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let head = ToyHead::new(4, GridShape::new(3, 2, 2), 0);
        assert!(head.forward(&features(3, 5, 0)).is_err());
        assert!(head.forward(&features(4, 4, 0)).is_err());
    }
}
