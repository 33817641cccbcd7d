//! Minimal differentiable numeric core used by the galaxy-shape network.
//!
//! Tensors are dense and row-major. Image batches use NHWC layout so that a
//! convolution lowers to a single GEMM over `N*H*W` rows. Reverse-mode
//! gradients are computed by replaying the layers recorded on a tape during a
//! training-mode forward pass.

pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod scalar;
pub mod seed;
pub mod sequential;
pub mod tensor;

pub use error::{NnError, Result};
pub use layers::{
    BatchNorm, Conv2d, Dense, Dropout, Flatten, Layer, MaxPool2d, Maxout, Mode, PRelu,
};
pub use optim::{Adam, AdamHyper};
pub use scalar::Scalar;
pub use seed::derive_seed;
pub use sequential::Sequential;
pub use tensor::{Param, Tensor};
