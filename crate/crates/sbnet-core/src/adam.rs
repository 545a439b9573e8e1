//! Adam with bias correction and decoupled weight decay.

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First/second moment estimates per trainable parameter plus the step count.
#[derive(Debug)]
pub struct AdamState<S: Scalar> {
    pub cfg: AdamConfig,
    moments: Vec<Option<(Vec<S>, Vec<S>)>>,
    step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            moments: Vec::new(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// One update over every trainable parameter. Every such parameter must
    /// carry a gradient; gradients are cleared afterwards.
    pub fn step(&mut self, ps: &mut ParamSet<S>) -> Result<()> {
        if self.moments.len() < ps.len() {
            self.moments.resize_with(ps.len(), || None);
        }
        let ids: Vec<_> = ps.trainable_ids().collect();
        for id in &ids {
            if ps.get(*id).grad.is_none() {
                return Err(Error::Optim(format!(
                    "missing gradient for parameter '{}'",
                    ps.name(*id)
                )));
            }
        }
        self.step += 1;
        let t = self.step;
        let b1 = S::from_f64(self.cfg.beta1);
        let b2 = S::from_f64(self.cfg.beta2);
        let lr = S::from_f64(self.cfg.lr);
        let eps = S::from_f64(self.cfg.eps);
        let wd = S::from_f64(self.cfg.weight_decay);
        let corr1 = S::from_f64(1.0 - self.cfg.beta1.powi(t as i32));
        let corr2 = S::from_f64(1.0 - self.cfg.beta2.powi(t as i32));

        for id in ids {
            let n = ps.get(id).numel();
            let slot = &mut self.moments[id.0];
            if slot.is_none() {
                *slot = Some((vec![S::zero(); n], vec![S::zero(); n]));
            }
            let (m, v) = slot.as_mut().unwrap();
            let tensor = ps.get_mut(id);
            let grad = tensor.grad.take().unwrap();
            let data = tensor.data_mut();
            for i in 0..n {
                let gi = grad[i];
                m[i] = b1 * m[i] + (S::one() - b1) * gi;
                v[i] = b2 * v[i] + (S::one() - b2) * gi * gi;
                let m_hat = m[i] / corr1;
                let v_hat = v[i] / corr2;
                // Decoupled weight decay: applied directly to the weights,
                // not mixed into the gradient moments.
                data[i] = data[i] - lr * (m_hat / (v_hat.sqrt() + eps) + wd * data[i]);
            }
        }
        Ok(())
    }
}

/// Step-wise learning-rate schedule: the rate is divided by 10 at the start
/// of each listed epoch (1-based).
pub fn lr_at_epoch(base_lr: f64, drop_epochs: &[usize], epoch: usize) -> f64 {
    let drops = drop_epochs.iter().filter(|&&d| epoch >= d).count();
    base_lr / 10f64.powi(drops as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::TensorBase;

    #[test]
    fn first_step_moves_by_lr_in_gradient_direction() {
        // With zero-initialized moments, bias correction makes the first
        // update exactly -lr * g / (|g| + eps), i.e. magnitude ~= lr.
        let mut ps = ParamSet::<f32>::new();
        let id = ps
            .add("w", TensorBase::new(&[3], vec![0.5, -0.25, 1.0]).unwrap(), true)
            .unwrap();
        ps.accumulate_grad(id, &[0.3, -0.7, 0.001], 1.0).unwrap();
        let mut opt = AdamState::new(AdamConfig {
            lr: 1e-3,
            ..Default::default()
        });
        opt.step(&mut ps).unwrap();
        let w = ps.get(id).data();
        let expect = [0.5 - 1e-3, -0.25 + 1e-3, 1.0 - 1e-3];
        for (got, want) in w.iter().zip(expect) {
            assert!((got - want).abs() < 1e-6, "got {got}, want {want}");
        }
        assert_eq!(opt.step_count(), 1);
        assert!(ps.get(id).grad.is_none(), "grads must be cleared");
    }

    #[test]
    fn zero_grad_zero_decay_is_a_fixed_point() {
        let mut ps = ParamSet::<f32>::new();
        let id = ps
            .add("w", TensorBase::new(&[2], vec![1.5, -2.0]).unwrap(), true)
            .unwrap();
        let mut opt = AdamState::new(AdamConfig::default());
        for _ in 0..3 {
            ps.accumulate_grad(id, &[0.0, 0.0], 1.0).unwrap();
            opt.step(&mut ps).unwrap();
        }
        assert_eq!(ps.get(id).data(), &[1.5, -2.0]);
        assert_eq!(opt.step_count(), 3);
    }

    #[test]
    fn missing_grad_names_the_parameter() {
        let mut ps = ParamSet::<f32>::new();
        ps.add("nlm.embed", TensorBase::zeros(&[2]), true).unwrap();
        let mut opt = AdamState::<f32>::new(AdamConfig::default());
        let err = opt.step(&mut ps).unwrap_err().to_string();
        assert!(err.contains("nlm.embed"), "error was: {err}");
    }

    #[test]
    fn decoupled_decay_shrinks_weights_without_touching_moments() {
        let mut ps = ParamSet::<f32>::new();
        let id = ps
            .add("w", TensorBase::new(&[1], vec![1.0]).unwrap(), true)
            .unwrap();
        let mut opt = AdamState::new(AdamConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..Default::default()
        });
        ps.accumulate_grad(id, &[0.0], 1.0).unwrap();
        opt.step(&mut ps).unwrap();
        // Zero gradient: update reduces to w -= lr * wd * w.
        let w = ps.get(id).data()[0];
        assert!((w - (1.0 - 0.1 * 0.5)).abs() < 1e-6);
    }

    #[test]
    fn lr_schedule_divides_by_ten_at_drop_epochs() {
        let drops = [5, 8];
        assert_eq!(lr_at_epoch(3e-5, &drops, 1), 3e-5);
        assert_eq!(lr_at_epoch(3e-5, &drops, 4), 3e-5);
        assert!((lr_at_epoch(3e-5, &drops, 5) - 3e-6).abs() < 1e-18);
        assert!((lr_at_epoch(3e-5, &drops, 7) - 3e-6).abs() < 1e-18);
        assert!((lr_at_epoch(3e-5, &drops, 8) - 3e-7).abs() < 1e-19);
        assert!((lr_at_epoch(3e-5, &drops, 10) - 3e-7).abs() < 1e-19);
    }
}
