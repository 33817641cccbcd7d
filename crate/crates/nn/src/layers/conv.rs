use rand::Rng;

use super::{he_normal, missing_cache, shape_err, Mode};
use crate::error::Result;
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::{Param, Tensor};

/// Stride-1 "same" convolution over NHWC batches.
///
/// Weights are stored `[out, kh, kw, in]`, which is exactly the row layout of
/// the im2col matrix, so forward is `col · Wᵀ`.
#[derive(Clone, Debug)]
pub struct Conv2d<T: Scalar> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub(crate) cache: Option<ConvCache<T>>,
}

#[derive(Clone, Debug)]
pub(crate) struct ConvCache<T> {
    col: Vec<T>,
    in_shape: [usize; 4],
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng>(
        rng: &mut R,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
    ) -> Self {
        let fan_in = in_channels * kernel.0 * kernel.1;
        let weight = he_normal(
            rng,
            &[out_channels, kernel.0, kernel.1, in_channels],
            fan_in,
        );
        Self {
            in_channels,
            out_channels,
            kernel,
            weight: Param::new(weight),
            bias: Param::new(Tensor::zeros(&[out_channels])),
            cache: None,
        }
    }

    fn patch_len(&self) -> usize {
        self.kernel.0 * self.kernel.1 * self.in_channels
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<[usize; 4]> {
        match *x.shape() {
            [n, h, w, c] if c == self.in_channels => Ok([n, h, w, c]),
            _ => Err(shape_err(
                "conv",
                format!("[N, H, W, {}]", self.in_channels),
                x.shape(),
            )),
        }
    }

    fn im2col(&self, x: &[T], [n, h, w, c]: [usize; 4]) -> Vec<T> {
        let (kh, kw) = self.kernel;
        let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
        let k = self.patch_len();
        let mut col = vec![T::zero(); n * h * w * k];
        for b in 0..n {
            for y in 0..h {
                for xo in 0..w {
                    let row = ((b * h + y) * w + xo) * k;
                    for ky in 0..kh {
                        let iy = y as isize + ky as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = xo as isize + kx as isize - pw as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let src = ((b * h + iy as usize) * w + ix as usize) * c;
                            let dst = row + (ky * kw + kx) * c;
                            if c == 1 {
                                col[dst] = x[src];
                            } else {
                                col[dst..dst + c].copy_from_slice(&x[src..src + c]);
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, col: &[T], [n, h, w, c]: [usize; 4]) -> Vec<T> {
        let (kh, kw) = self.kernel;
        let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
        let k = self.patch_len();
        let mut dx = vec![T::zero(); n * h * w * c];
        for b in 0..n {
            for y in 0..h {
                for xo in 0..w {
                    let row = ((b * h + y) * w + xo) * k;
                    for ky in 0..kh {
                        let iy = y as isize + ky as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = xo as isize + kx as isize - pw as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let dst = ((b * h + iy as usize) * w + ix as usize) * c;
                            let src = row + (ky * kw + kx) * c;
                            if c == 1 {
                                dx[dst] = dx[dst] + col[src];
                            } else {
                                for (d, s) in dx[dst..dst + c].iter_mut().zip(&col[src..src + c]) {
                                    *d = *d + *s;
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&mut self, x: Tensor<T>, mode: &Mode<'_>) -> Result<Tensor<T>> {
        let dims = self.check_input(&x)?;
        let [n, h, w, _] = dims;
        let rows = n * h * w;
        let k = self.patch_len();
        let o = self.out_channels;
        let col = self.im2col(x.data(), dims);
        let mut out = vec![T::zero(); rows * o];
        for r in 0..rows {
            out[r * o..(r + 1) * o].copy_from_slice(self.bias.value.data());
        }
        gemm(
            T::one(),
            MatRef::row_major(&col, rows, k),
            MatRef::transposed(self.weight.value.data(), o, k),
            T::one(),
            &mut out,
        );
        self.cache = mode.is_train().then_some(ConvCache {
            col,
            in_shape: dims,
        });
        Tensor::new(vec![n, h, w, o], out)
    }

    pub fn backward(&mut self, grad: Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("conv"))?;
        let [n, h, w, _] = cache.in_shape;
        let rows = n * h * w;
        let k = self.patch_len();
        let o = self.out_channels;
        if grad.shape() != [n, h, w, o] {
            return Err(shape_err(
                "conv backward",
                format!("[{n}, {h}, {w}, {o}]"),
                grad.shape(),
            ));
        }
        let g = grad.data();
        // dW[o, k] += gᵀ · col
        gemm(
            T::one(),
            MatRef::transposed(g, rows, o),
            MatRef::row_major(&cache.col, rows, k),
            T::one(),
            self.weight.grad.data_mut(),
        );
        let db = self.bias.grad.data_mut();
        for r in 0..rows {
            for (d, &v) in db.iter_mut().zip(&g[r * o..(r + 1) * o]) {
                *d = *d + v;
            }
        }
        let mut dcol = vec![T::zero(); rows * k];
        gemm(
            T::one(),
            MatRef::row_major(g, rows, o),
            MatRef::row_major(self.weight.value.data(), o, k),
            T::zero(),
            &mut dcol,
        );
        Tensor::new(cache.in_shape.to_vec(), self.col2im(&dcol, cache.in_shape))
    }
}
