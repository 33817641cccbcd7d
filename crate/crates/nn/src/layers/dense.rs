use rand::Rng;

use super::{he_normal, missing_cache, shape_err, Mode};
use crate::error::Result;
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::{Param, Tensor};

/// Fully connected layer `y = x·W + b` with `W` stored `[in, out]`.
#[derive(Clone, Debug)]
pub struct Dense<T: Scalar> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub(crate) cache: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new<R: Rng>(rng: &mut R, inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: Param::new(he_normal(rng, &[inputs, outputs], inputs)),
            bias: Param::new(Tensor::zeros(&[outputs])),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: Tensor<T>, mode: &Mode<'_>) -> Result<Tensor<T>> {
        let out = affine(
            &x,
            &self.weight,
            &self.bias,
            self.inputs,
            self.outputs,
            "dense",
        )?;
        self.cache = mode.is_train().then_some(x);
        Ok(out)
    }

    pub fn backward(&mut self, grad: Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or_else(|| missing_cache("dense"))?;
        affine_backward(
            &x,
            &grad,
            &mut self.weight,
            &mut self.bias,
            self.inputs,
            self.outputs,
            "dense",
        )
    }
}

pub(crate) fn affine<T: Scalar>(
    x: &Tensor<T>,
    weight: &Param<T>,
    bias: &Param<T>,
    inputs: usize,
    outputs: usize,
    name: &str,
) -> Result<Tensor<T>> {
    if x.shape().len() != 2 || x.row_len() != inputs {
        return Err(shape_err(name, format!("[B, {inputs}]"), x.shape()));
    }
    let b = x.rows();
    let mut out = Vec::with_capacity(b * outputs);
    for _ in 0..b {
        out.extend_from_slice(bias.value.data());
    }
    gemm(
        T::one(),
        MatRef::row_major(x.data(), b, inputs),
        MatRef::row_major(weight.value.data(), inputs, outputs),
        T::one(),
        &mut out,
    );
    Tensor::new(vec![b, outputs], out)
}

pub(crate) fn affine_backward<T: Scalar>(
    x: &Tensor<T>,
    grad: &Tensor<T>,
    weight: &mut Param<T>,
    bias: &mut Param<T>,
    inputs: usize,
    outputs: usize,
    name: &str,
) -> Result<Tensor<T>> {
    let b = x.rows();
    if grad.shape() != [b, outputs] {
        return Err(shape_err(name, format!("[{b}, {outputs}]"), grad.shape()));
    }
    gemm(
        T::one(),
        MatRef::transposed(x.data(), b, inputs),
        MatRef::row_major(grad.data(), b, outputs),
        T::one(),
        weight.grad.data_mut(),
    );
    let db = bias.grad.data_mut();
    for row in grad.data().chunks_exact(outputs) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d = *d + g;
        }
    }
    let mut dx = vec![T::zero(); b * inputs];
    gemm(
        T::one(),
        MatRef::row_major(grad.data(), b, outputs),
        MatRef::transposed(weight.value.data(), inputs, outputs),
        T::zero(),
        &mut dx,
    );
    Tensor::new(vec![b, inputs], dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_loss_gradient_is_input() {
        // L = sum(x·W) → dL/dW[i, j] = sum_b x[b, i]
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut d = Dense::<f64>::new(&mut rng, 3, 2);
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0]).unwrap();
        let y = d.forward(x, &Mode::Train { seed: 0 }).unwrap();
        d.backward(Tensor::full(y.shape(), 1.0)).unwrap();
        let expect = [0.0, 2.5, 7.0];
        for i in 0..3 {
            for j in 0..2 {
                assert!((d.weight.grad.data()[i * 2 + j] - expect[i]).abs() < 1e-12);
            }
        }
        assert_eq!(d.bias.grad.data(), &[2.0, 2.0]);
    }
}
