//! Layer set of the shape network.
//!
//! Every layer caches what its backward pass needs only when run in
//! [`Mode::Train`]; evaluation passes keep no state besides batch-norm
//! running statistics, which are read but not updated.

mod batchnorm;
mod conv;
mod dense;
mod dropout;
mod flatten;
mod maxout;
mod pool;
mod prelu;

pub use batchnorm::BatchNorm;
pub use conv::Conv2d;
pub use dense::Dense;
pub use dropout::Dropout;
pub use flatten::Flatten;
pub use maxout::Maxout;
pub use pool::MaxPool2d;
pub use prelu::PRelu;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::{Param, Tensor};

/// Forward-pass mode.
#[derive(Clone, Copy, Debug)]
pub enum Mode<'a> {
    /// Batch statistics in batch norm, fresh dropout masks drawn from `seed`,
    /// activations cached for backward.
    Train { seed: u64 },
    /// Running statistics, dropout disabled.
    Eval,
    /// Running statistics, dropout active; row `r` of the batch uses
    /// `row_seeds[r]` so that each row is an independent posterior sample.
    McDropout { row_seeds: &'a [u64] },
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

/// One layer of a [`crate::Sequential`].
#[derive(Clone, Debug)]
pub enum Layer<T: Scalar> {
    Conv2d(Conv2d<T>),
    BatchNorm(BatchNorm<T>),
    PRelu(PRelu<T>),
    MaxPool2d(MaxPool2d),
    Flatten(Flatten),
    Dense(Dense<T>),
    Maxout(Maxout<T>),
    Dropout(Dropout),
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv",
            Layer::BatchNorm(_) => "bn",
            Layer::PRelu(_) => "prelu",
            Layer::MaxPool2d(_) => "maxpool",
            Layer::Flatten(_) => "flatten",
            Layer::Dense(_) => "dense",
            Layer::Maxout(_) => "maxout",
            Layer::Dropout(_) => "dropout",
        }
    }

    pub fn forward(&mut self, input: Tensor<T>, mode: &Mode<'_>) -> Result<Tensor<T>> {
        let out = match self {
            Layer::Conv2d(l) => l.forward(input, mode)?,
            Layer::BatchNorm(l) => l.forward(input, mode)?,
            Layer::PRelu(l) => l.forward(input, mode)?,
            Layer::MaxPool2d(l) => l.forward(input, mode)?,
            Layer::Flatten(l) => l.forward(input, mode)?,
            Layer::Dense(l) => l.forward(input, mode)?,
            Layer::Maxout(l) => l.forward(input, mode)?,
            Layer::Dropout(l) => l.forward(input, mode)?,
        };
        if !out.is_finite() {
            return Err(NnError::NonFinite {
                layer: self.kind().to_string(),
            });
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad: Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d(l) => l.backward(grad),
            Layer::BatchNorm(l) => l.backward(grad),
            Layer::PRelu(l) => l.backward(grad),
            Layer::MaxPool2d(l) => l.backward(grad),
            Layer::Flatten(l) => l.backward(grad),
            Layer::Dense(l) => l.backward(grad),
            Layer::Maxout(l) => l.backward(grad),
            Layer::Dropout(l) => l.backward(grad),
        }
    }

    /// Learnable tensors, in a fixed order.
    pub fn params(&self) -> Vec<(&'static str, &Param<T>)> {
        match self {
            Layer::Conv2d(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            Layer::BatchNorm(l) => vec![("gamma", &l.gamma), ("beta", &l.beta)],
            Layer::PRelu(l) => vec![("slope", &l.slope)],
            Layer::Dense(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            Layer::Maxout(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            Layer::MaxPool2d(_) | Layer::Flatten(_) | Layer::Dropout(_) => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        match self {
            Layer::Conv2d(l) => vec![("weight", &mut l.weight), ("bias", &mut l.bias)],
            Layer::BatchNorm(l) => vec![("gamma", &mut l.gamma), ("beta", &mut l.beta)],
            Layer::PRelu(l) => vec![("slope", &mut l.slope)],
            Layer::Dense(l) => vec![("weight", &mut l.weight), ("bias", &mut l.bias)],
            Layer::Maxout(l) => vec![("weight", &mut l.weight), ("bias", &mut l.bias)],
            Layer::MaxPool2d(_) | Layer::Flatten(_) | Layer::Dropout(_) => Vec::new(),
        }
    }

    /// Non-learnable state that must be persisted (batch-norm running stats).
    pub fn buffers(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            Layer::BatchNorm(l) => vec![
                ("running_mean", &l.running_mean),
                ("running_var", &l.running_var),
            ],
            _ => Vec::new(),
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        match self {
            Layer::BatchNorm(l) => {
                vec![
                    ("running_mean", &mut l.running_mean),
                    ("running_var", &mut l.running_var),
                ]
            }
            _ => Vec::new(),
        }
    }

    pub fn clear_cache(&mut self) {
        match self {
            Layer::Conv2d(l) => l.cache = None,
            Layer::BatchNorm(l) => l.cache = None,
            Layer::PRelu(l) => l.cache = None,
            Layer::MaxPool2d(l) => l.cache = None,
            Layer::Flatten(l) => l.cache = None,
            Layer::Dense(l) => l.cache = None,
            Layer::Maxout(l) => l.cache = None,
            Layer::Dropout(l) => l.cache = None,
        }
    }
}

pub(crate) fn shape_err(layer: &str, expected: impl Into<String>, got: &[usize]) -> NnError {
    NnError::ShapeMismatch {
        layer: layer.to_string(),
        expected: expected.into(),
        got: got.to_vec(),
    }
}

pub(crate) fn missing_cache(layer: &str) -> NnError {
    NnError::BackwardWithoutForward {
        layer: layer.to_string(),
    }
}

/// He-style fan-in normal initialisation.
pub(crate) fn he_normal<T: Scalar, R: Rng>(
    rng: &mut R,
    shape: &[usize],
    fan_in: usize,
) -> Tensor<T> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of_f64(normal.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}
