//! Minimal dense neural-network substrate: tensors, 4x4 stride-2
//! (transposed) convolutions with hand-written backward passes, and Adam.

mod adam;
mod layers;
pub mod ops;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use layers::{he_std, Conv2d, ConvTranspose2d, Linear};
pub use tensor::{swap_leading, Tensor};
