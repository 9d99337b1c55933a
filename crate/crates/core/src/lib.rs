//! Deformable image registration with a spatially varying diffusion
//! regularizer.
//!
//! A stationary velocity field and a voxel-wise weight map are fitted jointly
//! per image pair. The weight map carries a beta or Gaussian hyperprior, the
//! velocity is exponentiated by scaling and squaring, and the two prior
//! hyperparameters can be tuned with the bundled TPE search.

pub mod diffeo;
pub mod error;
pub mod eval;
pub mod field;
pub mod hyperopt;
pub mod optimize;
pub mod regularizer;
pub mod similarity;
pub mod synth;

pub use diffeo::{exponentiate, fold_metrics, invert, jacobian_determinant, JacobianReport};
pub use error::{Error, Result};
pub use eval::{dice, endpoint_error, report, tre, DiceScores, EpeStats, LandmarkSet, Report, TreResult};
pub use field::{compose, upsample_linear, warp, warp_nearest, Field, Grid, ScalarField, VectorField};
pub use hyperopt::{run_study, tpe_suggest, Direction, ParamSpec, SearchSpace, TpeStudy};
pub use optimize::{register, register_observed, RegistrationConfig, RegistrationResult, WeightParams};
pub use regularizer::{total_loss, LabelStacks, LossTerms, PriorKind};
pub use similarity::{ncc_loss, NccConfig};
