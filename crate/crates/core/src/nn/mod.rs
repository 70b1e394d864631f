//! Minimal neural-network numeric substrate.
//!
//! Reverse-mode gradients are computed by recording forward operations on a
//! [`tape::Tape`] over a fixed op vocabulary (matmul/linear, layer norm,
//! masked softmax attention, elementwise ops, reductions) and replaying the
//! records backwards. The substrate is generic over [`scalar::Scalar`]:
//! training runs in `f32`, gradient checks and oracles in `f64`.

pub mod adam;
pub mod gradcheck;
pub mod init;
pub mod ops;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use adam::{adam_update, AdamParams, AdamState};
pub use gradcheck::{finite_diff_gradcheck, GradCheckReport};
pub use ops::{layer_norm, linear, multi_head_attention, sinusoidal_positions, softmax};
pub use scalar::Scalar;
pub use tape::{BufId, Tape};
pub use tensor::{AttentionMask, Parameter, Tensor};
