//! Parameterization of the weight volume, Adam, and the per-pair
//! registration loop.

mod adam;
mod gradcheck;
mod register;
mod weights;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{gradient_check, DEFAULT_FD_STEP, DEFAULT_PROBES};
pub use register::{register, register_observed, IterationReport, RegistrationConfig, RegistrationResult};
pub use weights::{low_resolution_grid, realize_weights, weights_backward, RealizedWeights, WeightParams};
