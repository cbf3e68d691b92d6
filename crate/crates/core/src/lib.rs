//! Snow removal with mask-guided residual networks: synthetic snow
//! generation, the three-stage network, training and evaluation.

pub mod archive;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod filters;
pub mod gf_net;
pub mod mask_net;
pub mod model;
pub mod nn;
pub mod reconstruct_net;
pub mod synthesis;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use model::{GuidanceCase, ModelConfig, Smgarn};
pub use tensor::{ImageTensor, ValueDomain};

pub use smgarn_autograd as autograd;
