//! A small reverse-mode engine over a fixed operator set: affine layers,
//! ReLU, row max-pooling, broadcast concatenation, subtraction, unit
//! normalization, L2 norms and Chamfer distance. Double precision throughout.

mod adam;
mod checkpoint;
mod gradcheck;
mod mlp;
pub mod ops;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use checkpoint::{
    checkpoint_from_str, checkpoint_to_string, load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT,
    CHECKPOINT_VERSION,
};
pub use gradcheck::{finite_difference_check, GradCheckEntry, GradCheckOptions, GradCheckReport};
pub use mlp::{backprop, mlp_forward, mlp_forward_broadcast, Activation, InputGrads, MlpSpec, MlpTape, OutputNorm};
pub use ops::{max_pool_backward, max_pool_rows};
pub use params::{Gradients, ParamStore};
pub use tensor::Tensor;
