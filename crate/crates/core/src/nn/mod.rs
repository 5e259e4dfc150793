//! Dense tensors, layer kernels with hand-written backward passes, and the
//! U-Net.
//!
//! Reverse-mode differentiation is layer-granular: each layer records what
//! its backward pass needs during a train-mode forward, and
//! [`UNetModel::backward`] replays the layers in reverse. Max-pool ties send
//! the gradient to the first maximum in row-major order.

pub mod checkpoint;
pub mod layers;
pub mod ops;
mod tensor;
mod unet;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use layers::Mode;
pub use tensor::{Parameter, Tensor};
pub use unet::{UNetConfig, UNetModel};
