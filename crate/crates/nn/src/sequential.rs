use std::ops::Range;

use crate::error::{NnError, Result};
use crate::layers::{Layer, Mode};
use crate::scalar::Scalar;
use crate::tensor::{Param, Tensor};

/// A fixed stack of layers plus the tape of layers executed by the current
/// train-mode pass.
///
/// A train-mode `forward_range` that does not continue the recorded pass
/// starts a new tape. `backward` replays the tape in reverse and consumes it.
#[derive(Clone, Debug)]
pub struct Sequential<T: Scalar> {
    layers: Vec<Layer<T>>,
    tape: Vec<usize>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self {
            layers,
            tape: Vec::new(),
        }
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn forward(&mut self, x: Tensor<T>, mode: &Mode<'_>) -> Result<Tensor<T>> {
        self.forward_range(0..self.layers.len(), x, mode)
    }

    pub fn forward_range(
        &mut self,
        range: Range<usize>,
        mut x: Tensor<T>,
        mode: &Mode<'_>,
    ) -> Result<Tensor<T>> {
        if range.end > self.layers.len() || range.start > range.end {
            return Err(NnError::InvalidConfig(format!(
                "layer range {range:?} outside 0..{}",
                self.layers.len()
            )));
        }
        if mode.is_train() {
            let continues = range.start > 0 && self.tape.last() == Some(&(range.start - 1));
            if !continues {
                self.clear_tape();
            }
        }
        for i in range {
            x = self.layers[i].forward(x, mode)?;
            if mode.is_train() {
                self.tape.push(i);
            }
        }
        Ok(x)
    }

    /// Back-propagates `grad` (dL/d output of the last recorded layer),
    /// accumulating parameter gradients, and returns dL/d input.
    pub fn backward(&mut self, mut grad: Tensor<T>) -> Result<Tensor<T>> {
        if self.tape.is_empty() {
            return Err(NnError::BackwardWithoutForward {
                layer: "sequential".into(),
            });
        }
        while let Some(i) = self.tape.pop() {
            grad = self.layers[i].backward(grad)?;
        }
        Ok(grad)
    }

    pub fn clear_tape(&mut self) {
        self.tape.clear();
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            for (_, p) in layer.params_mut() {
                p.zero_grad();
            }
        }
    }

    pub fn param_name(index: usize, layer: &Layer<T>, name: &str) -> String {
        format!("{index}.{}.{name}", layer.kind())
    }

    pub fn named_params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, p) in layer.params() {
                out.push((Self::param_name(i, layer, name), p));
            }
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let kind = layer.kind();
            for (name, p) in layer.params_mut() {
                out.push((format!("{i}.{kind}.{name}"), p));
            }
        }
        out
    }

    pub fn named_buffers(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, b) in layer.buffers() {
                out.push((Self::param_name(i, layer, name), b));
            }
        }
        out
    }

    pub fn named_buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let kind = layer.kind();
            for (name, b) in layer.buffers_mut() {
                out.push((format!("{i}.{kind}.{name}"), b));
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.value.len()).sum()
    }
}
