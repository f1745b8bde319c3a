//! Minimal differentiable core: row-major f64 tensors, a recorded tape with
//! reverse-mode gradients over a fixed op vocabulary, Adam, finite-difference
//! gradient checking and the binary model container.

mod adam;
mod gradcheck;
pub mod io;
pub mod ops;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use gradcheck::{grad_check, GradReport};
pub use io::{load_model, save_model, ArchDescriptor, LayerDesc, OpKind};
pub use params::ParamSet;
pub use tape::{Grads, Graph, Var};
pub use tensor::Tensor;
