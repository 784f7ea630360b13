use super::{Grads, ParamSet, Tensor};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected Adam update in place.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Grads) -> Result<()> {
        grads.check_matches(params)?;
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, ((_, p), (_, g))) in params.iter_mut().zip(grads.iter()).enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((pk, &gk), mk), vk) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mk = beta1 * *mk + (1.0 - beta1) * gk;
                *vk = beta2 * *vk + (1.0 - beta2) * gk * gk;
                let m_hat = *mk / c1;
                let v_hat = *vk / c2;
                *pk -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Plain gradient descent: `p ← p − lr · g`.
pub fn sgd_step(params: &mut ParamSet, grads: &Grads, lr: f64) -> Result<()> {
    grads.check_matches(params)?;
    for ((_, p), (_, g)) in params.iter_mut().zip(grads.iter()) {
        for (pk, gk) in p.data_mut().iter_mut().zip(g.data()) {
            *pk -= lr * gk;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(v)).unwrap();
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = scalar_param(0.7);
        let mut s = AdamState::new(&p, AdamConfig::with_lr(0.1));
        let g = Grads::zeros_like(&p);
        s.step(&mut p, &g).unwrap();
        assert_eq!(p.get("w").unwrap().item(), 0.7);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_param(0.0);
        let mut s = AdamState::new(&p, AdamConfig::with_lr(0.1));
        let g = Grads::unflatten(&[1.0], &p).unwrap();
        s.step(&mut p, &g).unwrap();
        // m̂ = 1, v̂ = 1, so the step is lr / (1 + ε).
        let expect = -0.1 / (1.0 + 1e-8);
        assert!((p.get("w").unwrap().item() - expect).abs() < 1e-15);
    }

    #[test]
    fn steps_are_reproducible() {
        let run = || {
            let mut p = scalar_param(0.3);
            let mut s = AdamState::new(&p, AdamConfig::with_lr(0.05));
            for gv in [0.4, -1.3] {
                let g = Grads::unflatten(&[gv], &p).unwrap();
                s.step(&mut p, &g).unwrap();
            }
            p.get("w").unwrap().item().to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = scalar_param(0.0);
        let other = {
            let mut q = ParamSet::new();
            q.insert("w", Tensor::zeros(&[2])).unwrap();
            q
        };
        let mut s = AdamState::new(&p, AdamConfig::default());
        assert!(s.step(&mut p, &Grads::zeros_like(&other)).is_err());
        assert!(sgd_step(&mut p, &Grads::zeros_like(&other), 0.1).is_err());
    }
}
