//! Minimal feed-forward network engine: masked-softmax classifiers, exact
//! input gradients, and SGD training.

pub mod io;
pub mod matrix;
pub mod model;
pub mod train;

pub use matrix::Matrix;
pub use model::{Activation, Classifier, DenseLayer, MlpArchitecture, PROB_FLOOR};
pub use train::{train, TrainConfig};
