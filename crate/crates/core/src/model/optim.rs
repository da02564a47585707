//! AdamW and the step learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyper-parameters of [`AdamW`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

/// Adam with decoupled weight decay. Decay is applied to the parameters
/// directly (`p -= lr * wd * p`) before the bias-corrected Adam update.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, num_params: usize) -> Self {
        AdamW {
            config,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One update. Rejects non-finite gradients without touching any state.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                self.m.len(),
                format!("{} params / {} grads", params.len(), grads.len()),
            ));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient[{i}] = {}", grads[i])));
        }
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * weight_decay * params[i];
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// `base_lr` divided by ten once for every milestone `<= epoch`.
///
/// The decade shift is applied to the decimal representation of `base_lr`,
/// so `1e-4` decays to exactly `1e-5`, `1e-6`, `1e-7`, `1e-8`.
pub fn lr_schedule(epoch: usize, base_lr: f64, milestones: &[usize]) -> f64 {
    let decades = milestones.iter().filter(|&&m| m <= epoch).count() as i32;
    if decades == 0 || base_lr == 0.0 || !base_lr.is_finite() {
        return base_lr;
    }
    let repr = format!("{base_lr:e}");
    let (mantissa, exp) = repr.split_once('e').expect("exponent formatting");
    let exp: i32 = exp.parse().expect("integer exponent");
    format!("{mantissa}e{}", exp - decades)
        .parse()
        .unwrap_or(base_lr / 10f64.powi(decades))
}

pub fn validate_milestones(milestones: &[usize]) -> Result<()> {
    if milestones.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!(
            "milestones must be strictly increasing, got {milestones:?}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut opt = AdamW::new(
            AdamWConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
            3,
        );
        let mut p = vec![1.0, -2.0, 0.5];
        for _ in 0..5 {
            opt.step(&mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(opt.step, 5);
    }

    #[test]
    fn zero_gradient_decays_geometrically() {
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.0005,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, 1);
        let mut p = vec![3.0];
        opt.step(&mut p, &[0.0]).unwrap();
        assert!((p[0] - 3.0 * (1.0 - 0.1 * 0.0005)).abs() < 1e-15);
        opt.step(&mut p, &[0.0]).unwrap();
        assert!((p[0] - 3.0 * (1.0 - 0.1 * 0.0005f64).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn first_step_matches_hand_formula() {
        // m1 = (1-b1) g, v1 = (1-b2) g^2, bias-corrected to g and g^2,
        // so the update is -lr * g / (|g| + eps).
        let cfg = AdamWConfig {
            lr: 0.01,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, 1);
        let mut p = vec![0.5];
        let g = 0.3;
        opt.step(&mut p, &[g]).unwrap();
        let expected = 0.5 - 0.01 * g / (g.abs() + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut opt = AdamW::new(AdamWConfig::default(), 2);
        let mut p = vec![1.0, 1.0];
        assert!(matches!(
            opt.step(&mut p, &[0.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(opt.step, 0);
        assert_eq!(p, vec![1.0, 1.0]);
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(lr_schedule(0, 1e-4, &[1, 2, 3, 4]), 1e-4);
        assert_eq!(lr_schedule(2, 1e-4, &[1, 2, 3, 4]), 1e-6);
        assert_eq!(lr_schedule(9, 1e-4, &[3, 4, 5, 6]), 1e-8);
        assert_eq!(lr_schedule(1, 2.5e-3, &[1]), 2.5e-4);
    }

    #[test]
    fn milestones_must_increase() {
        assert!(validate_milestones(&[1, 2, 3]).is_ok());
        assert!(validate_milestones(&[1, 1]).is_err());
        assert!(validate_milestones(&[3, 2]).is_err());
    }
}
