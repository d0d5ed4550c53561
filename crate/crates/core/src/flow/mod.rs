//! Continuous normalising flow: an MLP velocity field trained by flow
//! matching and integrated with an adaptive Runge-Kutta solver.

mod field;
mod likelihood;
mod mlp;
mod ode;
mod train;

pub use field::{BlockwiseField, LinearField, VectorField, ZeroField};
pub use likelihood::{log_likelihood, log_likelihood_batch, LikelihoodBatch, StatVector, MAX_EXACT_DIVERGENCE_DIM};
pub use mlp::{Activation, Dense, FlowArchitecture, FlowModel};
pub use ode::{integrate, integrate_batch, solve, Direction, SolverConfig, SolverMethod};
pub use train::{flow_matching_loss, held_out_loss, train, train_with, DataSampler, DatasetSampler, TrainConfig};
