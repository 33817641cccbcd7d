use super::{missing_cache, shape_err, Mode};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{Param, Tensor};

/// Parametric ReLU with one learnable slope per channel (last axis).
#[derive(Clone, Debug)]
pub struct PRelu<T: Scalar> {
    pub channels: usize,
    pub slope: Param<T>,
    pub(crate) cache: Option<Tensor<T>>,
}

impl<T: Scalar> PRelu<T> {
    pub fn new(channels: usize, init_slope: f64) -> Self {
        Self {
            channels,
            slope: Param::new(Tensor::full(&[channels], T::of_f64(init_slope))),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: Tensor<T>, mode: &Mode<'_>) -> Result<Tensor<T>> {
        let c = self.channels;
        if x.shape().last() != Some(&c) {
            return Err(shape_err("prelu", format!("[..., {c}]"), x.shape()));
        }
        let a = self.slope.value.data();
        let mut out = x.data().to_vec();
        for row in out.chunks_exact_mut(c) {
            for (v, &s) in row.iter_mut().zip(a) {
                *v = if *v < T::zero() { *v * s } else { *v };
            }
        }
        let shape = x.shape().to_vec();
        self.cache = mode.is_train().then_some(x);
        Tensor::new(shape, out)
    }

    pub fn backward(&mut self, grad: Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or_else(|| missing_cache("prelu"))?;
        if grad.shape() != x.shape() {
            return Err(shape_err(
                "prelu backward",
                format!("{:?}", x.shape()),
                grad.shape(),
            ));
        }
        let c = self.channels;
        let a = self.slope.value.data().to_vec();
        let da = self.slope.grad.data_mut();
        let mut dx = grad.data().to_vec();
        for (drow, xrow) in dx.chunks_exact_mut(c).zip(x.data().chunks_exact(c)) {
            for ch in 0..c {
                let neg = xrow[ch] < T::zero();
                da[ch] = da[ch] + if neg { drow[ch] * xrow[ch] } else { T::zero() };
                drow[ch] = if neg { drow[ch] * a[ch] } else { drow[ch] };
            }
        }
        Tensor::new(x.shape().to_vec(), dx)
    }
}
