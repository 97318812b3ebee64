//! Training small dense and residual networks that grow by one hidden layer
//! mid-training.
//!
//! The insertion position is picked by a first-order sensitivity indicator:
//! every candidate slot receives an identity-initialized layer, and the
//! gradient of the loss with respect to those new weights, scaled by the layer
//! width, says how much releasing each one would help.
//!
//! - [`numerics`]: matrices, activations, softmax cross entropy.
//! - [`network`]: architectures, parameters, forward passes, checkpoints.
//! - [`autograd`]: hand-written backpropagation and a finite-difference oracle.
//! - [`insertion`]: identity layers, merit evaluation, layer insertion.
//! - [`training`]: the gradient-descent loop with an insertion point.
//! - [`experiments`]: spiral data, initialization, experiment runner, output files.

pub mod autograd;
pub mod error;
pub mod experiments;
pub mod insertion;
pub mod network;
pub mod numerics;
pub mod rng;
pub mod training;

pub use autograd::{backprop, finite_diff_gradient, GradientSet};
pub use error::{Error, Result};
pub use experiments::dataset::{generate_spirals, split_train_test, Dataset, SplitDataset};
pub use experiments::init::init_params;
pub use insertion::{CandidatePosition, MeritReport, Strategy};
pub use network::{param_count, NetworkKind, NetworkSpec, ParamSet};
pub use numerics::DenseMatrix;
pub use training::{train, TrainConfig, TrainingHistory};
