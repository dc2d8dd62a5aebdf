//! Multi-trajectory maximum likelihood for stochastic process families,
//! with Fisher-information geometry, Hellinger localization checks and a
//! scaling-experiment harness.

// `!(x > 0.0)` is used on purpose so NaN inputs fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod bounds;
pub mod config;
pub mod divergences;
pub mod error;
pub mod estimation;
pub mod gaussian;
pub mod harness;
pub mod io;
pub mod localization;
pub mod markov;
pub mod model;
pub mod noise;
pub mod numeric;
pub mod regression;
pub mod rng;
pub mod sin_glm;
pub mod types;
pub mod verify;

pub use bounds::sufficient_m;
pub use error::{Error, Result};
pub use model::ModelSpec;
pub use rng::{derive_stream, RngStream, SimRng};
pub use types::{FisherMatrix, Normalization, ParamDomain, ParamVector, States, Trajectory, TrajectoryDataset};
