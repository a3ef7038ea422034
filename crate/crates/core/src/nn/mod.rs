//! The convolutional generator and the numerical machinery to train it.

pub mod checkpoint;
pub mod generator;
pub mod ops;
pub mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use generator::{
    forward, forward_tensor, init_generator, loss_gradient, loss_gradient_tensor, GeneratorConfig,
    GeneratorParams, LossGradient,
};
pub use tensor::{Real, Tensor};
