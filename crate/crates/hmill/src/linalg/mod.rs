//! Dense numeric kernels: matrices, layers, losses, the Adam optimizer and a
//! finite-difference gradient oracle. Everything is 64-bit; gradient checks
//! are not reliable at single precision.

mod gradcheck;
mod layer;
mod loss;
mod matrix;
mod optim;

pub use gradcheck::finite_difference_gradient;
pub use layer::{glorot_normal_init, Activation, DenseLayer};
pub use loss::{
    multiclass_cross_entropy, softmax_columns, weighted_binary_cross_entropy,
    weighted_cross_entropy_from_probs, PROB_FLOOR,
};
pub use matrix::Matrix;
pub use optim::AdamState;
