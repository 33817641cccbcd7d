use super::{missing_cache, shape_err, Mode};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{Param, Tensor};

/// Batch normalisation over the last (channel) axis.
///
/// Train mode normalises with biased batch statistics and updates the running
/// estimates with `momentum`; the other modes use the running estimates.
#[derive(Clone, Debug)]
pub struct BatchNorm<T: Scalar> {
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub(crate) cache: Option<BnCache<T>>,
}

#[derive(Clone, Debug)]
pub(crate) struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<f64>,
    shape: Vec<usize>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            momentum: 0.1,
            eps: 1e-5,
            gamma: Param::new(Tensor::full(&[channels], T::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            cache: None,
        }
    }

    /// Normalised pre-scale activations from the last train-mode forward.
    pub fn normalized_cache(&self) -> Option<&[T]> {
        self.cache.as_ref().map(|c| c.xhat.as_slice())
    }

    pub fn forward(&mut self, x: Tensor<T>, mode: &Mode<'_>) -> Result<Tensor<T>> {
        let c = self.channels;
        if x.shape().last() != Some(&c) {
            return Err(shape_err("bn", format!("[..., {c}]"), x.shape()));
        }
        let m = x.len() / c;
        let data = x.data();
        let (mean, var) = if mode.is_train() {
            let mut mean = vec![0.0f64; c];
            for row in data.chunks_exact(c) {
                for (acc, v) in mean.iter_mut().zip(row) {
                    *acc += v.as_f64();
                }
            }
            mean.iter_mut().for_each(|v| *v /= m as f64);
            let mut var = vec![0.0f64; c];
            for row in data.chunks_exact(c) {
                for ((acc, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                    let d = v.as_f64() - mu;
                    *acc += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= m as f64);
            let mom = self.momentum;
            let unbias = if m > 1 {
                m as f64 / (m as f64 - 1.0)
            } else {
                1.0
            };
            for ch in 0..c {
                let rm = &mut self.running_mean.data_mut()[ch];
                *rm = T::of_f64((1.0 - mom) * rm.as_f64() + mom * mean[ch]);
                let rv = &mut self.running_var.data_mut()[ch];
                *rv = T::of_f64((1.0 - mom) * rv.as_f64() + mom * var[ch] * unbias);
            }
            (mean, var)
        } else {
            (
                self.running_mean.to_f64_vec(),
                self.running_var.to_f64_vec(),
            )
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let gamma = self.gamma.value.to_f64_vec();
        let beta = self.beta.value.to_f64_vec();
        let mut out = Vec::with_capacity(data.len());
        let mut xhat = if mode.is_train() {
            Vec::with_capacity(data.len())
        } else {
            Vec::new()
        };
        for row in data.chunks_exact(c) {
            for ch in 0..c {
                let xh = (row[ch].as_f64() - mean[ch]) * inv_std[ch];
                if mode.is_train() {
                    xhat.push(T::of_f64(xh));
                }
                out.push(T::of_f64(gamma[ch] * xh + beta[ch]));
            }
        }
        self.cache = mode.is_train().then(|| BnCache {
            xhat,
            inv_std,
            shape: x.shape().to_vec(),
        });
        Tensor::new(x.shape().to_vec(), out)
    }

    pub fn backward(&mut self, grad: Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("bn"))?;
        if grad.shape() != cache.shape.as_slice() {
            return Err(shape_err(
                "bn backward",
                format!("{:?}", cache.shape),
                grad.shape(),
            ));
        }
        let c = self.channels;
        let m = grad.len() / c;
        let g = grad.data();
        let gamma = self.gamma.value.to_f64_vec();
        let mut sum_g = vec![0.0f64; c];
        let mut sum_gx = vec![0.0f64; c];
        for (grow, xrow) in g.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
            for ch in 0..c {
                let gv = grow[ch].as_f64();
                sum_g[ch] += gv;
                sum_gx[ch] += gv * xrow[ch].as_f64();
            }
        }
        for ch in 0..c {
            let db = &mut self.beta.grad.data_mut()[ch];
            *db = T::of_f64(db.as_f64() + sum_g[ch]);
            let dg = &mut self.gamma.grad.data_mut()[ch];
            *dg = T::of_f64(dg.as_f64() + sum_gx[ch]);
        }
        // dx = γ·inv_std/m · (m·g − Σg − x̂·Σ(g·x̂))
        let mf = m as f64;
        let mut dx = Vec::with_capacity(g.len());
        for (grow, xrow) in g.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
            for ch in 0..c {
                let v = gamma[ch] * cache.inv_std[ch] / mf
                    * (mf * grow[ch].as_f64() - sum_g[ch] - xrow[ch].as_f64() * sum_gx[ch]);
                dx.push(T::of_f64(v));
            }
        }
        Tensor::new(cache.shape, dx)
    }
}
