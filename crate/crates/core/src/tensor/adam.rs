use super::{ParamStore, Tensor};
use crate::scalar::Scalar;

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub step: u64,
    pub eta: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub const DEFAULT_ETA: f64 = 1e-3;

    pub fn new(eta: T) -> Self {
        Self {
            step: 0,
            eta,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            epsilon: T::of(1e-8),
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update from the gradients currently held in `params`.
    /// Gradients are left as they are.
    pub fn step(&mut self, params: &mut ParamStore<T>) {
        if self.m.len() != params.len() {
            self.m = params
                .ids()
                .map(|id| Tensor::zeros(params.value(id).shape()))
                .collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let one = T::one();
        let bc1 = one - self.beta1.powi(t);
        let bc2 = one - self.beta2.powi(t);
        let (b1, b2, eta, eps) = (self.beta1, self.beta2, self.eta, self.epsilon);
        for id in params.ids().collect::<Vec<_>>() {
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            let (value, grad) = params.value_and_grad_mut(id);
            for (((p, &g), m), v) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= eta * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
