//! Multimodal spatio-temporal vision transformer for pixel-level yield
//! regression from satellite image series, weekly climate and free-text
//! management reports.

pub mod checkpoint;
pub mod cli;
pub mod context;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use optim::{AdamW, AdamWState};
pub use params::ParamStore;
pub use rng::Rng;
pub use tensor::Tensor;
