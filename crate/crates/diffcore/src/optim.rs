use crate::error::{Error, Result};
use crate::params::{ParamId, ParamSet};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
struct Slot<T> {
    id: ParamId,
    m: Vec<T>,
    v: Vec<T>,
}

/// Bias-corrected Adam over a fixed subset of a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Adam<T = f32> {
    config: AdamConfig,
    step: u64,
    slots: Vec<Slot<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>, ids: impl IntoIterator<Item = ParamId>) -> Self {
        let slots = ids
            .into_iter()
            .map(|id| {
                let n = params.get(id).numel();
                Slot { id, m: vec![T::zero(); n], v: vec![T::zero(); n] }
            })
            .collect();
        Adam { config, step: 0, slots }
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.slots.iter().map(|s| s.id)
    }

    /// Applies one update to every managed, non-frozen parameter and clears
    /// the consumed grad slots. Frozen parameters keep their exact bytes.
    pub fn step(&mut self, params: &mut ParamSet<T>) -> Result<()> {
        for s in &self.slots {
            if !params.is_frozen(s.id) && params.get(s.id).grad().is_none() {
                return Err(Error::Usage(format!("missing gradient for parameter {:?}", params.name(s.id))));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = T::lit(1.0 - c.beta1.powi(t));
        let bc2 = T::lit(1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        for s in &mut self.slots {
            let tensor = params.get_mut(s.id);
            let Some(grad) = tensor.take_grad() else {
                continue;
            };
            if params.is_frozen(s.id) {
                continue;
            }
            let tensor = params.get_mut(s.id);
            for (((w, &g), m), v) in tensor.data_mut().iter_mut().zip(&grad).zip(&mut s.m).zip(&mut s.v) {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut ps = ParamSet::<f64>::new();
        let id = ps.add("w", "g", Tensor::from_vec(vec![1.5, -2.0])).unwrap();
        let mut adam = Adam::new(AdamConfig::with_lr(0.1), &ps, [id]);
        ps.get_mut(id).set_grad(vec![0.0, 0.0]).unwrap();
        adam.step(&mut ps).unwrap();
        assert_eq!(ps.get(id).data(), &[1.5, -2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut ps = ParamSet::<f64>::new();
        let id = ps.add("w", "g", Tensor::scalar(1.0)).unwrap();
        let mut adam = Adam::new(AdamConfig::with_lr(0.1), &ps, [id]);
        ps.get_mut(id).set_grad(vec![1.0]).unwrap();
        adam.step(&mut ps).unwrap();
        assert!((ps.get(id).data()[0] - 0.9).abs() < 1e-8);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn frozen_group_bytes_unchanged() {
        let mut ps = ParamSet::<f32>::new();
        let id = ps.add("enc.w", "encoder", Tensor::from_vec(vec![0.3, 0.7])).unwrap();
        ps.freeze("encoder");
        let before = ps.group_bytes("encoder");
        let mut adam = Adam::new(AdamConfig::default(), &ps, [id]);
        for _ in 0..50 {
            ps.get_mut(id).set_grad(vec![5.0, -3.0]).unwrap();
            adam.step(&mut ps).unwrap();
        }
        assert_eq!(ps.group_bytes("encoder"), before);
    }

    #[test]
    fn missing_gradient_is_usage_error() {
        let mut ps = ParamSet::<f32>::new();
        let id = ps.add("w", "g", Tensor::scalar(1.0)).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), &ps, [id]);
        assert!(matches!(adam.step(&mut ps), Err(Error::Usage(_))));
        assert_eq!(adam.steps(), 0);
    }
}
