use super::{missing_cache, shape_err, Mode};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Non-overlapping max pooling over NHWC, output size `floor(H/size)`.
#[derive(Clone, Debug)]
pub struct MaxPool2d {
    pub size: usize,
    pub(crate) cache: Option<PoolCache>,
}

#[derive(Clone, Debug)]
pub(crate) struct PoolCache {
    argmax: Vec<usize>,
    in_shape: Vec<usize>,
}

impl MaxPool2d {
    pub fn new(size: usize) -> Self {
        Self { size, cache: None }
    }

    pub fn forward<T: Scalar>(&mut self, x: Tensor<T>, mode: &Mode<'_>) -> Result<Tensor<T>> {
        let [n, h, w, c] = match *x.shape() {
            [n, h, w, c] if h >= self.size && w >= self.size => [n, h, w, c],
            _ => {
                return Err(shape_err(
                    "maxpool",
                    format!("[N, >={s}, >={s}, C]", s = self.size),
                    x.shape(),
                ))
            }
        };
        let s = self.size;
        let (oh, ow) = (h / s, w / s);
        let data = x.data();
        let mut out = Vec::with_capacity(n * oh * ow * c);
        let mut argmax = Vec::with_capacity(if mode.is_train() { n * oh * ow * c } else { 0 });
        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let mut best = ((b * h + oy * s) * w + ox * s) * c + ch;
                        for dy in 0..s {
                            for dx in 0..s {
                                let i = ((b * h + oy * s + dy) * w + ox * s + dx) * c + ch;
                                if data[i] > data[best] {
                                    best = i;
                                }
                            }
                        }
                        out.push(data[best]);
                        if mode.is_train() {
                            argmax.push(best);
                        }
                    }
                }
            }
        }
        self.cache = mode.is_train().then(|| PoolCache {
            argmax,
            in_shape: x.shape().to_vec(),
        });
        Tensor::new(vec![n, oh, ow, c], out)
    }

    pub fn backward<T: Scalar>(&mut self, grad: Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("maxpool"))?;
        if grad.len() != cache.argmax.len() {
            return Err(shape_err(
                "maxpool backward",
                format!("{} elements", cache.argmax.len()),
                grad.shape(),
            ));
        }
        let mut dx = Tensor::zeros(&cache.in_shape);
        let d = dx.data_mut();
        for (&i, &g) in cache.argmax.iter().zip(grad.data()) {
            d[i] = d[i] + g;
        }
        Ok(dx)
    }
}
