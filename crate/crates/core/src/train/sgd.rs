use std::collections::BTreeMap;

use crate::layers::Layer;
use crate::{Error, Result, Scalar, Tensor};

/// SGD with momentum and L2 weight decay folded into the velocity:
/// `v = m·v + g + wd·w`, `w -= lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        }
    }

    /// Update every trainable parameter, then clear all gradients.
    pub fn step<L: Layer<T> + ?Sized>(&mut self, model: &mut L, lr: f64) {
        let m = T::from_f64_lossy(self.momentum);
        let wd = T::from_f64_lossy(self.weight_decay);
        let lr = T::from_f64_lossy(lr);
        let velocity = &mut self.velocity;
        model.visit_mut("", &mut |name, p| {
            if p.trainable {
                let v = velocity
                    .entry(name.to_string())
                    .or_insert_with(|| Tensor::zeros_like(&p.value));
                for ((v, w), &g) in v.data_mut().iter_mut().zip(p.value.data_mut()).zip(p.grad.data()) {
                    *v = m * *v + g + wd * *w;
                    *w -= lr * *v;
                }
            }
            p.zero_grad();
        });
    }

    /// Momentum buffers by parameter name, sorted.
    pub fn velocities(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.velocity.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn set_velocity(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        if let Some(existing) = self.velocity.get(name) {
            if existing.dims() != value.dims() {
                return Err(Error::TensorDims {
                    name: name.to_string(),
                    expected: existing.dims().to_vec(),
                    found: value.dims().to_vec(),
                });
            }
        }
        self.velocity.insert(name.to_string(), value);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Linear;

    fn layer(w: f64, b: f64) -> Linear<f64> {
        Linear::from_params(Tensor::full([1, 1], w), Tensor::full([1], b))
    }

    fn set_grads(l: &mut Linear<f64>, g: f64) {
        l.visit_mut("", &mut |_, p| p.grad.fill(g));
    }

    #[test]
    fn vanilla_step() {
        let mut l = layer(1.0, 2.0);
        set_grads(&mut l, 0.5);
        Sgd::new(0.0, 0.0).step(&mut l, 0.1);
        assert_eq!(l.weight.value.data(), &[1.0 - 0.1 * 0.5]);
        assert_eq!(l.weight.grad.data(), &[0.0]);
    }

    #[test]
    fn zero_grads_leave_params() {
        let mut l = layer(1.0, 2.0);
        Sgd::new(0.9, 0.0).step(&mut l, 0.1);
        assert_eq!(l.weight.value.data(), &[1.0]);
        assert_eq!(l.bias.value.data(), &[2.0]);
    }

    #[test]
    fn momentum_matches_geometric_accumulation() {
        let (lr, m, g) = (0.1, 0.9, 0.5);
        let mut l = layer(1.0, 0.0);
        let mut opt = Sgd::new(m, 0.0);
        for _ in 0..2 {
            set_grads(&mut l, g);
            opt.step(&mut l, lr);
        }
        // v1 = g, v2 = m·g + g
        let expected = 1.0 - lr * g - lr * (m * g + g);
        assert!((l.weight.value.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let mut l = layer(2.0, 0.0);
        Sgd::new(0.0, 0.5).step(&mut l, 0.1);
        assert_eq!(l.weight.value.data(), &[2.0 - 0.1 * 0.5 * 2.0]);
    }
}
