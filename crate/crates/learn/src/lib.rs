//! Differentiable network, objectives and training loops for Gaussian scene encoders.

pub mod autoencoder;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod network;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod pretrain;

pub use config::RunConfig;
pub use error::{LearnError, Result};
pub use graph::{Gradients, Graph, Var};
pub use network::{Network, NetworkSpec};
pub use params::{Mat, ParamStore};
