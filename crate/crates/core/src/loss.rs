//! Composite detection loss with analytic gradients.
//!
//! ```text
//! L = λ_act   Σ_pos (σ(c) − ĉ)²
//!   + λ_noact Σ_neg  σ(c)²
//!   + λ_cls   Σ_pos Σ_k FocalLoss(σ(p_k), p̂_k)
//!   + λ_coord Σ_pos (1 − GIoU(decode(t), b̂))
//! ```
//!
//! summed over the `S x S x B` entries of every sample and divided by the
//! batch size. Gradients are with respect to the raw head outputs and share
//! the [`PredictionGrid`] layout. Everything is computed in `f64`.

use serde::{Deserialize, Serialize};

use crate::assignment::{AssignmentMap, PositiveTarget};
use crate::error::{Error, Result};
use crate::geometry::{self, sigmoid, AnchorSet};
use crate::model::{PredictionGrid, CLASS_OFFSET, CONF_INDEX};

/// Term weights and focal-loss parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_act: f64,
    pub lambda_noact: f64,
    pub lambda_cls: f64,
    pub lambda_coord: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_act: 5.0,
            lambda_noact: 1.0,
            lambda_cls: 1.0,
            lambda_coord: 5.0,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_act,
            self.lambda_noact,
            self.lambda_cls,
            self.lambda_coord,
            self.focal_gamma,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(
                "loss weights must be finite and non-negative",
            ));
        }
        if !(0.0..=1.0).contains(&self.focal_alpha) {
            return Err(Error::invalid("focal_alpha must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Box regression term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegressionLoss {
    #[default]
    Giou,
    /// Smooth-L1 on `(σ(t_x), σ(t_y), t_w, t_h)` against the encoded target.
    /// Kept only for A/B runs.
    SmoothL1,
}

/// Confidence target for positive entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConfidenceTarget {
    /// Constant 1.0.
    #[default]
    One,
    /// IoU between the decoded prediction and its ground truth, treated as a
    /// constant (no gradient flows through the target).
    Iou,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    #[serde(flatten)]
    pub weights: LossWeights,
    pub regression: RegressionLoss,
    pub confidence_target: ConfidenceTarget,
}

/// Value and gradient of one loss term on one sample.
#[derive(Debug, Clone)]
pub struct TermOutput {
    pub value: f64,
    pub grad: PredictionGrid,
}

/// Batch-normalized loss terms. Each term already carries its λ weight, so
/// `total` is their plain sum.
#[derive(Debug, Clone, Serialize)]
pub struct LossBreakdown {
    pub conf_act: f64,
    pub conf_noact: f64,
    pub cls: f64,
    pub coord: f64,
    pub total: f64,
    pub positives: usize,
    pub ground_truths: usize,
    /// Gradient of `total` per sample.
    #[serde(skip)]
    pub gradients: Vec<PredictionGrid>,
}

/// Neumaier-compensated accumulator; keeps sums stable independent of
/// magnitude spread.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

fn check_shape(preds: &PredictionGrid, map: &AssignmentMap) -> Result<()> {
    if preds.shape() != map.shape() {
        return Err(Error::shape(map.shape(), preds.shape()));
    }
    Ok(())
}

/// `log σ(x)`, stable for large |x|.
#[inline]
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Sigmoid focal loss of one logit against a target in `[0, 1]` and its
/// derivative with respect to the logit.
///
/// For `y = 1`: `-α (1-p)^γ log p`; for `y = 0`: `-(1-α) p^γ log(1-p)`.
/// Fractional targets interpolate linearly between the two.
pub fn sigmoid_focal(logit: f64, target: f64, gamma: f64, alpha: f64) -> (f64, f64) {
    let p = sigmoid(logit);
    let q = 1.0 - p;
    let log_p = log_sigmoid(logit);
    let log_q = log_sigmoid(-logit);

    let pos_value = -alpha * q.powf(gamma) * log_p;
    let pos_grad = alpha * q.powf(gamma) * (gamma * p * log_p - q);
    let neg_value = -(1.0 - alpha) * p.powf(gamma) * log_q;
    let neg_grad = (1.0 - alpha) * p.powf(gamma) * (p - gamma * q * log_q);

    (
        target * pos_value + (1.0 - target) * neg_value,
        target * pos_grad + (1.0 - target) * neg_grad,
    )
}

fn conf_terms(
    preds: &PredictionGrid,
    map: &AssignmentMap,
    weights: &LossWeights,
    target_of: impl Fn(usize, &PositiveTarget) -> f64,
) -> Result<(f64, f64, PredictionGrid)> {
    check_shape(preds, map)?;
    let shape = preds.shape();
    let mut grad = PredictionGrid::zeros(shape);
    let mut act = CompensatedSum::default();
    let mut noact = CompensatedSum::default();
    for e in 0..shape.entries() {
        let raw = preds.entry(e)[CONF_INDEX];
        let p = sigmoid(raw);
        let (lambda, target, acc) = match map.positive(e) {
            Some(t) => (weights.lambda_act, target_of(e, t), &mut act),
            None => (weights.lambda_noact, 0.0, &mut noact),
        };
        let d = p - target;
        acc.add(lambda * d * d);
        grad.entry_mut(e)[CONF_INDEX] = lambda * 2.0 * d * p * (1.0 - p);
    }
    Ok((act.value(), noact.value(), grad))
}

/// Confidence MSE through a sigmoid: `λ_act Σ_pos (σ(c) − ĉ)² + λ_noact Σ_neg σ(c)²`.
pub fn confidence_loss(
    preds: &PredictionGrid,
    map: &AssignmentMap,
    weights: &LossWeights,
) -> Result<TermOutput> {
    let (act, noact, grad) = conf_terms(preds, map, weights, |_, t| t.confidence)?;
    Ok(TermOutput {
        value: act + noact,
        grad,
    })
}

/// α-balanced sigmoid focal loss over the class logits of positive entries.
pub fn focal_cls_loss(
    preds: &PredictionGrid,
    map: &AssignmentMap,
    weights: &LossWeights,
) -> Result<TermOutput> {
    check_shape(preds, map)?;
    let shape = preds.shape();
    let mut grad = PredictionGrid::zeros(shape);
    let mut total = CompensatedSum::default();
    for (e, target) in map.positives() {
        if target.class_target.len() != shape.classes {
            return Err(Error::shape(shape.classes, target.class_target.len()));
        }
        let logits = &preds.entry(e)[CLASS_OFFSET..];
        let g = &mut grad.entry_mut(e)[CLASS_OFFSET..];
        for k in 0..shape.classes {
            let (v, d) = sigmoid_focal(
                logits[k],
                target.class_target[k],
                weights.focal_gamma,
                weights.focal_alpha,
            );
            total.add(weights.lambda_cls * v);
            g[k] = weights.lambda_cls * d;
        }
    }
    Ok(TermOutput {
        value: total.value(),
        grad,
    })
}

/// `λ_coord Σ_pos (1 − GIoU(decode_box(t), gt))` with the gradient chained
/// through GIoU, the corner conversion and the decoder.
pub fn giou_loss(
    preds: &PredictionGrid,
    map: &AssignmentMap,
    anchors: &AnchorSet,
    stride: usize,
    weights: &LossWeights,
) -> Result<TermOutput> {
    check_shape(preds, map)?;
    let shape = preds.shape();
    let mut grad = PredictionGrid::zeros(shape);
    let mut total = CompensatedSum::default();
    for (e, target) in map.positives() {
        if target.bbox.area() <= 0.0 {
            return Err(Error::invalid("degenerate ground-truth box"));
        }
        let decoded = geometry::decode_box_with_grad(
            preds.raw_box(e),
            target.cell,
            anchors.get(target.anchor),
            stride,
        );
        let (g, d_corners) = geometry::giou_with_grad(&decoded.bbox, &target.bbox)?;
        total.add(weights.lambda_coord * (1.0 - g));
        let d_raw = decoded.backprop(d_corners);
        let out = grad.entry_mut(e);
        for k in 0..4 {
            out[k] = -weights.lambda_coord * d_raw[k];
        }
    }
    Ok(TermOutput {
        value: total.value(),
        grad,
    })
}

#[inline]
fn smooth_l1(d: f64) -> (f64, f64) {
    if d.abs() < 1.0 {
        (0.5 * d * d, d)
    } else {
        (d.abs() - 0.5, d.signum())
    }
}

/// Smooth-L1 alternative to [`giou_loss`] for A/B runs.
pub fn smooth_l1_loss(
    preds: &PredictionGrid,
    map: &AssignmentMap,
    weights: &LossWeights,
) -> Result<TermOutput> {
    check_shape(preds, map)?;
    let mut grad = PredictionGrid::zeros(preds.shape());
    let mut total = CompensatedSum::default();
    for (e, target) in map.positives() {
        let raw = preds.raw_box(e);
        let t = target.regression;
        let out = grad.entry_mut(e);
        for k in 0..2 {
            let s = sigmoid(raw[k]);
            let (v, d) = smooth_l1(s - sigmoid(t[k]));
            total.add(weights.lambda_coord * v);
            out[k] = weights.lambda_coord * d * s * (1.0 - s);
        }
        for k in 2..4 {
            let (v, d) = smooth_l1(raw[k] - t[k]);
            total.add(weights.lambda_coord * v);
            out[k] = weights.lambda_coord * d;
        }
    }
    Ok(TermOutput {
        value: total.value(),
        grad,
    })
}

/// Full loss over a batch, every term and gradient divided by the batch size.
pub fn total_loss(
    preds: &[PredictionGrid],
    maps: &[AssignmentMap],
    anchors: &AnchorSet,
    stride: usize,
    config: &LossConfig,
) -> Result<LossBreakdown> {
    if preds.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if preds.len() != maps.len() {
        return Err(Error::shape(
            format!("{} assignment maps", preds.len()),
            maps.len(),
        ));
    }
    let w = &config.weights;
    let n = preds.len() as f64;
    let mut conf_act = CompensatedSum::default();
    let mut conf_noact = CompensatedSum::default();
    let mut cls = CompensatedSum::default();
    let mut coord = CompensatedSum::default();
    let mut positives = 0;
    let mut ground_truths = 0;
    let mut gradients = Vec::with_capacity(preds.len());

    for (p, m) in preds.iter().zip(maps) {
        let (act, noact, mut grad) = match config.confidence_target {
            ConfidenceTarget::One => conf_terms(p, m, w, |_, t| t.confidence)?,
            ConfidenceTarget::Iou => conf_terms(p, m, w, |e, t| {
                let b = geometry::decode_box(p.raw_box(e), t.cell, anchors.get(t.anchor), stride);
                geometry::iou(&b, &t.bbox)
            })?,
        };
        let focal = focal_cls_loss(p, m, w)?;
        let reg = match config.regression {
            RegressionLoss::Giou => giou_loss(p, m, anchors, stride, w)?,
            RegressionLoss::SmoothL1 => smooth_l1_loss(p, m, w)?,
        };
        conf_act.add(act);
        conf_noact.add(noact);
        cls.add(focal.value);
        coord.add(reg.value);
        positives += crate::assignment::count_positives(m);
        ground_truths += m.num_gts();

        grad.add_assign(&focal.grad)?;
        grad.add_assign(&reg.grad)?;
        grad.scale(1.0 / n);
        gradients.push(grad);
    }

    let conf_act = conf_act.value() / n;
    let conf_noact = conf_noact.value() / n;
    let cls = cls.value() / n;
    let coord = coord.value() / n;
    Ok(LossBreakdown {
        conf_act,
        conf_noact,
        cls,
        coord,
        total: conf_act + conf_noact + cls + coord,
        positives,
        ground_truths,
        gradients,
    })
}
