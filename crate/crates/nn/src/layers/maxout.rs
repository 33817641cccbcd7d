use rand::Rng;

use super::dense::{affine, affine_backward};
use super::{he_normal, missing_cache, Mode};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{Param, Tensor};

/// Maxout unit: an affine map to `width·pieces` values followed by a max over
/// each group of `pieces` consecutive outputs.
#[derive(Clone, Debug)]
pub struct Maxout<T: Scalar> {
    pub inputs: usize,
    pub width: usize,
    pub pieces: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub(crate) cache: Option<MaxoutCache<T>>,
}

#[derive(Clone, Debug)]
pub(crate) struct MaxoutCache<T> {
    input: Tensor<T>,
    winner: Vec<usize>,
}

impl<T: Scalar> Maxout<T> {
    pub fn new<R: Rng>(rng: &mut R, inputs: usize, width: usize, pieces: usize) -> Self {
        let pieces = pieces.max(1);
        Self {
            inputs,
            width,
            pieces,
            weight: Param::new(he_normal(rng, &[inputs, width * pieces], inputs)),
            bias: Param::new(Tensor::zeros(&[width * pieces])),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: Tensor<T>, mode: &Mode<'_>) -> Result<Tensor<T>> {
        let z = affine(
            &x,
            &self.weight,
            &self.bias,
            self.inputs,
            self.width * self.pieces,
            "maxout",
        )?;
        let b = x.rows();
        let k = self.pieces;
        let mut out = Vec::with_capacity(b * self.width);
        let mut winner = Vec::with_capacity(if mode.is_train() { b * self.width } else { 0 });
        for (i, group) in z.data().chunks_exact(k).enumerate() {
            let mut best = 0;
            for p in 1..k {
                if group[p] > group[best] {
                    best = p;
                }
            }
            out.push(group[best]);
            if mode.is_train() {
                winner.push(i * k + best);
            }
        }
        self.cache = mode.is_train().then_some(MaxoutCache { input: x, winner });
        Tensor::new(vec![b, self.width], out)
    }

    pub fn backward(&mut self, grad: Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("maxout"))?;
        let b = cache.input.rows();
        let mut dz = Tensor::zeros(&[b, self.width * self.pieces]);
        let d = dz.data_mut();
        for (&w, &g) in cache.winner.iter().zip(grad.data()) {
            d[w] = g;
        }
        affine_backward(
            &cache.input,
            &dz,
            &mut self.weight,
            &mut self.bias,
            self.inputs,
            self.width * self.pieces,
            "maxout",
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Dense;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_piece_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut m = Maxout::<f32>::new(&mut rng, 5, 3, 1);
        let mut d = Dense::<f32>::new(&mut rng, 5, 3);
        d.weight = m.weight.clone();
        m.bias.value = Tensor::new(vec![3], vec![0.1, -0.2, 0.3]).unwrap();
        d.bias = m.bias.clone();
        let x = Tensor::new(vec![2, 5], (0..10).map(|v| v as f32 * 0.37 - 1.0).collect()).unwrap();
        let a = m.forward(x.clone(), &Mode::Eval).unwrap();
        let b = d.forward(x, &Mode::Eval).unwrap();
        assert_eq!(a, b);
    }
}
