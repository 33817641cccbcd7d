use crate::scalar::Scalar;
use crate::sequential::Sequential;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment estimates are stored in the parameter
/// precision so that a checkpointed optimizer resumes bit-exactly.
#[derive(Clone, Debug)]
pub struct Adam<T: Scalar> {
    pub hyper: AdamHyper,
    pub step: u64,
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(hyper: AdamHyper) -> Self {
        Self {
            hyper,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Applies one update from the gradients currently accumulated in `net`.
    pub fn step(&mut self, net: &mut Sequential<T>) {
        let mut params = net.named_params_mut();
        if self.first.len() != params.len() {
            self.first = params
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.shape()))
                .collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let AdamHyper {
            lr,
            beta1,
            beta2,
            eps,
        } = self.hyper;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((_, p), m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let grads = p.grad.data().to_vec();
            let values = p.value.data_mut();
            for (((w, g), mi), vi) in values
                .iter_mut()
                .zip(&grads)
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let g = g.as_f64();
                let m_new = T::of_f64(beta1 * mi.as_f64() + (1.0 - beta1) * g);
                let v_new = T::of_f64(beta2 * vi.as_f64() + (1.0 - beta2) * g * g);
                *mi = m_new;
                *vi = v_new;
                let m_hat = m_new.as_f64() / bc1;
                let v_hat = v_new.as_f64() / bc2;
                *w = T::of_f64(w.as_f64() - lr * m_hat / (v_hat.sqrt() + eps));
            }
        }
    }
}
