//! Iterative filtering of Bayesian multiverses.
//!
//! A multiverse is the set of models obtained by crossing analysis choices
//! (likelihood family, prior scheme, formula, group terms). Each model is
//! fitted with NUTS, checked for computational problems, compared on
//! leave-one-out predictive performance and checked against the data with
//! posterior predictive calibration. Models that fail are filtered out and
//! the survivors can be extended with new choices.

pub mod cli;
pub mod cv;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod multiverse;
pub mod pipeline;
pub mod ppc;
pub mod psis;
pub mod render;
pub mod sampler;
pub mod serde_float;

pub use data::{DataConfig, Dataset};
pub use error::{Error, Result};
pub use model::{build_design, log_joint_and_grad, log_lik_pointwise, Model, ParameterVector};
pub use multiverse::{expand, extend, Family, ModelId, ModelSpec, Multiverse, PriorScheme};
pub use sampler::{sample, Draws, SamplerConfig};
