use super::{missing_cache, shape_err, Mode};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Flattens each item and concatenates `group` consecutive items into one row.
///
/// With `group = 1` this is a plain flatten. With `group = g` a batch of
/// `N·g` feature maps becomes `N` rows of width `g·H·W·C`, which is how the
/// shared-trunk outputs of several views of one sample are concatenated.
#[derive(Clone, Debug)]
pub struct Flatten {
    pub group: usize,
    pub(crate) cache: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new(group: usize) -> Self {
        Self {
            group: group.max(1),
            cache: None,
        }
    }

    pub fn forward<T: Scalar>(&mut self, x: Tensor<T>, mode: &Mode<'_>) -> Result<Tensor<T>> {
        let n = x.rows();
        if n % self.group != 0 {
            return Err(shape_err(
                "flatten",
                format!("batch divisible by {}", self.group),
                x.shape(),
            ));
        }
        let shape = x.shape().to_vec();
        let width = x.row_len() * self.group;
        let out = x.reshape(&[n / self.group, width])?;
        self.cache = mode.is_train().then_some(shape);
        Ok(out)
    }

    pub fn backward<T: Scalar>(&mut self, grad: Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.cache.take().ok_or_else(|| missing_cache("flatten"))?;
        grad.reshape(&shape)
    }
}
