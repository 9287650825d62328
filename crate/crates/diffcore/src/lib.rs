//! Minimal reverse-mode differentiation for small dense and convolutional
//! networks.
//!
//! Values live in a [`Tape`] that borrows a [`ParamSet`]. Every op is
//! evaluated eagerly and recorded; [`Tape::backward`] replays the record in
//! reverse and returns [`Gradients`] keyed by [`ParamId`]. Gradients are
//! folded into the parameter grad slots with [`ParamSet::accumulate`] and
//! consumed by [`Adam::step`].
//!
//! All kernels are generic over [`Real`] so the same code runs in `f32` for
//! training and in `f64` for finite-difference checks.

mod checkpoint;
mod conv;
mod error;
mod optim;
mod params;
mod real;
mod tape;
mod tensor;

pub use checkpoint::{load_params, read_params, save_params, write_params, PARAM_MAGIC, PARAM_VERSION};
pub use conv::conv_output_size;
pub use error::{Error, Result};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamSet};
pub use real::{DType, Real};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
