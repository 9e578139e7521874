//! Numeric substrate: tensors, seeded RNG, MLP conditioners with manual
//! reverse-mode gradients, and the Adam optimizer.

pub mod adam;
pub mod mlp;
pub mod rng;
pub mod tensor;

pub use adam::Adam;
pub use mlp::{Mlp, MlpCache};
pub use rng::SeededRng;
pub use tensor::Tensor;
