//! Maximum-entropy reinforcement learning with observation-conditioned
//! bijective (normalizing-flow) policies, plus layerwise hierarchy
//! construction: each trained policy layer is frozen and embedded into the
//! environment dynamics so that its latent space becomes the action space of
//! the layer above it.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod envs;
pub mod error;
pub mod experiment;
pub mod flow;
pub mod hierarchy;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod replay;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Tape, Tensor, Var};
