pub mod attack;
pub mod checkpoint;
pub mod cli;
pub mod codec;
pub mod config;
pub mod dataset;
pub mod defense;
pub mod entropy;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod image;
pub mod io;
mod kernels;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod quant;
pub mod tensor;
pub mod train;

pub use codec::{CodecConfig, CodecModel, DistortionKind, EntropyMode};
pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use image::ImageTensor;
pub use tensor::Tensor;

/// Crate version recorded in checkpoints and report provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
