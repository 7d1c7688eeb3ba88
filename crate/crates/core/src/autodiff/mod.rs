//! Dense `f32` tensors with define-by-run reverse-mode differentiation and
//! the Adam optimizer.
//!
//! A [`Graph`] records every op applied since it was created. Values live in
//! the graph; trainable tensors live in a [`ParamSet`] and are copied in with
//! [`Graph::param`]. After [`Graph::backward_into`] the parameter gradients
//! are accumulated in place and [`Adam::step`] consumes them.

mod adam;
mod conv;
mod graph;
mod ops;
mod params;
mod sample;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use graph::{Graph, Gradients, Var, VjpFn};
pub use params::{ParamId, ParamSet};
pub use conv::{upsample_mask, PartialConvOut};
pub use sample::TexelSupport;
pub(crate) use sample::taps;
pub use tensor::Tensor;

pub mod checkpoint;
pub mod gradcheck;
