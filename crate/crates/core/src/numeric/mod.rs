//! Dense linear algebra, seeded randomness, feed-forward nets and gradient checking.

pub mod gradcheck;
mod matrix;
pub mod mlp;
pub mod optim;
mod rng;

pub use gradcheck::{grad_check, GradCheckReport};
pub use matrix::{dot, euclidean, squared_distance, Matrix};
pub use mlp::{sigmoid, Activation, Dense, ForwardCache, MlpGrads, MlpParams};
pub use optim::{Optimizer, OptimizerKind};
pub use rng::Rng;
