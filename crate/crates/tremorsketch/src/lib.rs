//! Classification pipeline for hand-drawn spiral and wave sketches
//! (healthy vs. Parkinson-affected), built from scratch: tensor autodiff,
//! image preprocessing, affine augmentation, an attention-augmented CNN,
//! Adam training with validation-loss checkpointing, and a hard-voting
//! ensemble over the two drawing branches.

pub mod augment;
pub mod data;
pub mod eval;
pub mod imageproc;
pub mod nn;
pub mod plot;
pub mod tensor;
pub mod train;

pub use imageproc::GrayImage;
pub use tensor::{Graph, Mode, Tensor, TensorError, Var};
