use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{missing_cache, shape_err, Mode};
use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::seed::derive_seed;
use crate::tensor::Tensor;

/// Inverted dropout: kept units are scaled by `1/keep` so the deterministic
/// evaluation pass needs no rescaling.
///
/// `stream` separates the random streams of several dropout layers that see
/// the same mode seed.
#[derive(Clone, Debug)]
pub struct Dropout {
    pub rate: f64,
    pub stream: u64,
    pub(crate) cache: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(rate: f64, stream: u64) -> Self {
        Self {
            rate,
            stream,
            cache: None,
        }
    }

    pub fn keep(&self) -> f64 {
        1.0 - self.rate
    }

    fn fill_mask(&self, rng: &mut ChaCha8Rng, mask: &mut [f64]) {
        let keep = self.keep();
        let scale = 1.0 / keep;
        for m in mask.iter_mut() {
            *m = if rng.gen::<f64>() < keep { scale } else { 0.0 };
        }
    }

    /// Mask values for a `rows x width` batch under `mode`, or `None` when
    /// dropout is inactive.
    pub fn mask(&self, mode: &Mode<'_>, rows: usize, width: usize) -> Result<Option<Vec<f64>>> {
        if self.rate <= 0.0 {
            return Ok(None);
        }
        match mode {
            Mode::Eval => Ok(None),
            Mode::Train { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(*seed, &[self.stream]));
                let mut mask = vec![0.0; rows * width];
                self.fill_mask(&mut rng, &mut mask);
                Ok(Some(mask))
            }
            Mode::McDropout { row_seeds } => {
                if row_seeds.len() != rows {
                    return Err(NnError::InvalidConfig(format!(
                        "MC dropout needs one seed per row: {} seeds for {rows} rows",
                        row_seeds.len()
                    )));
                }
                let mut mask = vec![0.0; rows * width];
                for (chunk, &s) in mask.chunks_exact_mut(width).zip(row_seeds.iter()) {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(s, &[self.stream]));
                    self.fill_mask(&mut rng, chunk);
                }
                Ok(Some(mask))
            }
        }
    }

    pub fn forward<T: Scalar>(&mut self, x: Tensor<T>, mode: &Mode<'_>) -> Result<Tensor<T>> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(NnError::InvalidConfig(format!(
                "dropout rate {} outside [0, 1)",
                self.rate
            )));
        }
        if x.shape().len() != 2 {
            return Err(shape_err("dropout", "[B, F]", x.shape()));
        }
        let mask = self.mask(mode, x.rows(), x.row_len())?;
        let out = match &mask {
            None => x,
            Some(m) => {
                let data = x
                    .data()
                    .iter()
                    .zip(m)
                    .map(|(&v, &s)| v * T::of_f64(s))
                    .collect();
                Tensor::new(x.shape().to_vec(), data)?
            }
        };
        if mode.is_train() {
            self.cache = Some(mask.unwrap_or_else(|| vec![1.0; out.len()]));
        }
        Ok(out)
    }

    pub fn backward<T: Scalar>(&mut self, grad: Tensor<T>) -> Result<Tensor<T>> {
        let mask = self.cache.take().ok_or_else(|| missing_cache("dropout"))?;
        if mask.len() != grad.len() {
            return Err(shape_err(
                "dropout backward",
                format!("{} elements", mask.len()),
                grad.shape(),
            ));
        }
        let data = grad
            .data()
            .iter()
            .zip(&mask)
            .map(|(&g, &s)| g * T::of_f64(s))
            .collect();
        Tensor::new(grad.shape().to_vec(), data)
    }
}
