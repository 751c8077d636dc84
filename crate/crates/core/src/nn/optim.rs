use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tensor::Matrix;
use crate::error::{Error, Result};

/// Name of the learnable log-temperature tensor; it is exempt from weight decay.
pub const TEMPERATURE_PARAM: &str = "log_temperature";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            peak_lr: 1e-3,
            warmup_steps: 0,
            batch_size: 32,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            max_steps: 1000,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr > 0.0) {
            return Err(Error::InvalidArgument("peak_lr must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument("batch_size must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument("betas must lie in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0) || !(self.eps_adam > 0.0) {
            return Err(Error::InvalidArgument(
                "weight_decay must be >= 0 and eps_adam > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Linear warm-up from 0 to `peak_lr` over `warmup_steps`, then constant.
pub fn lr_at(t: usize, cfg: &TrainConfig) -> f64 {
    if cfg.warmup_steps == 0 || t >= cfg.warmup_steps {
        cfg.peak_lr
    } else {
        cfg.peak_lr * t as f64 / cfg.warmup_steps as f64
    }
}

/// First and second moments, one buffer per tensor.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn moments(&self, i: usize) -> (&[f64], &[f64]) {
        (&self.m[i], &self.v[i])
    }
}

/// One AdamW update at step `t` (1-based) with learning rate `lr`.
///
/// Frozen tensors keep their values and moments. Any non-finite gradient
/// aborts before anything is modified.
pub fn adamw_step(
    params: &mut ParamSet,
    grads: &[Matrix],
    state: &mut AdamState,
    t: usize,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if t == 0 {
        return Err(Error::InvalidArgument("adamw steps are 1-based".into()));
    }
    if grads.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} gradients for {} tensors",
            grads.len(),
            params.len()
        )));
    }
    for (i, (g, p)) in grads.iter().zip(params.tensors()).enumerate() {
        if g.data.len() != p.numel() {
            return Err(Error::ShapeMismatch(format!(
                "gradient {} has {} values, tensor has {}",
                params.names()[i],
                g.data.len(),
                p.numel()
            )));
        }
        if !params.is_frozen(i) && !g.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of {} is not finite",
                params.names()[i]
            )));
        }
    }

    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..params.len() {
        if params.is_frozen(i) {
            continue;
        }
        let decay = if params.names()[i] == TEMPERATURE_PARAM {
            0.0
        } else {
            cfg.weight_decay
        };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let tensor = &mut params.tensors_mut()[i];
        for (k, (p, &g)) in tensor.data.iter_mut().zip(&grads[i].data).enumerate() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            let mut x = *p as f64;
            x *= 1.0 - lr * decay;
            x -= lr * m_hat / (v_hat.sqrt() + cfg.eps_adam);
            *p = x as f32;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn single(name: &str, shape: Vec<usize>, data: Vec<f32>) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert(name, Tensor::new(shape, data).unwrap()).unwrap();
        p
    }

    fn grad(data: Vec<f64>) -> Vec<Matrix> {
        vec![Matrix::from_vec(1, data.len(), data).unwrap()]
    }

    #[test]
    fn zero_grad_no_decay_is_identity() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = single("w", vec![3], vec![0.5, -1.0, 2.0]);
        let before = p.clone();
        let mut st = AdamState::new(&p);
        for t in 1..5 {
            adamw_step(&mut p, &grad(vec![0.0; 3]), &mut st, t, 0.1, &cfg).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let lr = 1e-3;
        for g in [0.3, -2.5, 1e-3] {
            let mut p = single("w", vec![1], vec![1.0]);
            let mut st = AdamState::new(&p);
            adamw_step(&mut p, &grad(vec![g]), &mut st, 1, lr, &cfg).unwrap();
            // m̂ = g and v̂ = g², so the step is lr·g/(|g|+eps)
            let expected = 1.0 - lr * f64::signum(g);
            let got = p.tensors()[0].data[0] as f64;
            assert!((got - expected).abs() <= lr * 1e-6 + 1e-7, "g={g}: {got} vs {expected}");
        }
    }

    #[test]
    fn decay_scales_params() {
        let cfg = TrainConfig {
            weight_decay: 0.1,
            ..Default::default()
        };
        let mut p = single("w", vec![2, 1], vec![4.0, -2.0]);
        let mut st = AdamState::new(&p);
        adamw_step(&mut p, &grad(vec![0.0, 0.0]), &mut st, 1, 0.5, &cfg).unwrap();
        assert_eq!(p.tensors()[0].data, vec![4.0 * 0.95, -2.0 * 0.95]);
    }

    #[test]
    fn frozen_tensors_untouched() {
        let cfg = TrainConfig::default();
        let mut p = single("w", vec![2], vec![1.0, 2.0]);
        p.insert("b", Tensor::new(vec![1], vec![3.0]).unwrap()).unwrap();
        p.set_frozen(0, true);
        let mut st = AdamState::new(&p);
        let grads = vec![
            Matrix::from_vec(1, 2, vec![f64::NAN, 1.0]).unwrap(),
            Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
        ];
        adamw_step(&mut p, &grads, &mut st, 1, 0.1, &cfg).unwrap();
        assert_eq!(p.tensors()[0].data, vec![1.0, 2.0]);
        assert_eq!(st.moments(0).0, &[0.0, 0.0]);
        assert_ne!(p.tensors()[1].data[0], 3.0);
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let cfg = TrainConfig::default();
        let mut p = single("w", vec![1], vec![1.0]);
        let mut st = AdamState::new(&p);
        let err = adamw_step(&mut p, &grad(vec![f64::INFINITY]), &mut st, 1, 0.1, &cfg).unwrap_err();
        assert_eq!(err.code(), "divergence");
    }

    #[test]
    fn warmup_schedule() {
        let cfg = TrainConfig {
            peak_lr: 5e-5,
            warmup_steps: 1000,
            ..Default::default()
        };
        assert_eq!(lr_at(0, &cfg), 0.0);
        assert_eq!(lr_at(500, &cfg), 2.5e-5);
        assert_eq!(lr_at(1000, &cfg), 5e-5);
        assert_eq!(lr_at(50_000, &cfg), 5e-5);
        let mut prev = 0.0;
        for t in 0..=1200 {
            let lr = lr_at(t, &cfg);
            assert!(lr >= prev);
            prev = lr;
        }
    }
}
