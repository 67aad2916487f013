//! Reverse-mode differentiation over small dense `f64` matrices, plus the
//! network pieces built on it.

pub mod adam;
pub mod kernels;
pub mod nn;
pub mod policy;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, polyak_update, AdamReport, AdamState};
pub use nn::{forward_mlp, Activation, BoundParams, LayerSpec, ParameterSet};
pub use policy::{sample_squashed_gaussian, SquashedGaussianHead};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
