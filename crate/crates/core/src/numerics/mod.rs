//! Dense linear algebra, normalization layers, the Adam optimizer, and the
//! finite-difference gradient checker the discriminator is built on.
//!
//! Everything is `f64`. The model is small enough that the extra precision
//! costs little and it keeps gradient checks meaningful.

mod gradcheck;
mod matrix;
mod norm;
mod param;

pub use gradcheck::{
    finite_diff_check, relative_error, step_size, EntrySelection, GradCheckReport, TensorCheck,
};
pub use matrix::{gemm, matmul, softmax_in_place, softmax_rows, Matrix};
pub use norm::{
    batch_norm, batch_norm_backward, batch_norm_forward, layer_norm, layer_norm_backward,
    layer_norm_forward, BatchMoments, BatchNormCache, BatchNormStats, LayerNormCache, Mode,
    BATCH_NORM_EPS, BATCH_NORM_MOMENTUM, LAYER_NORM_EPS,
};
pub use param::{ParamSet, ParamTensor, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
