//! Minimal reverse-mode automatic differentiation for convolutional
//! networks over NCHW tensors.

pub mod conv;
pub mod element;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;

pub use element::{DType, Element};
pub use error::{AutogradError, Result};
pub use graph::{Gradients, Graph, Var};
pub use optim::{clip_global_norm, Adam, AdamConfig};
pub use params::ParamStore;
