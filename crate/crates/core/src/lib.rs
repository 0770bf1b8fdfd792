//! Zero-shot video restoration with split-Langevin samplers.
//!
//! Degradation operators, TV3 regularization, proximal solvers, generative
//! priors behind a common trait, the samplers themselves and image metrics.

pub mod error;
pub mod filters;
pub mod io;
pub mod metrics;
pub mod operators;
pub mod priors;
pub mod prox;
pub mod regularizers;
pub mod samplers;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use priors::{sae_step, Prior};
pub use operators::{LinearOp, NoiseSpec, OpKind, Problem};
pub use regularizers::TVWeights;
pub use tensor::{Shape, VideoTensor};
