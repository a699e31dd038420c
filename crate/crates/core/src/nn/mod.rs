//! A small sequence-network engine in 64-bit arithmetic.
//!
//! Every layer maps a `[T x D_in]` sequence to a `[T x D_out]` sequence.
//! Training runs one sequence at a time; gradients accumulate across the
//! sequences of a batch before an optimizer step.

mod adam;
mod arch;
mod batchnorm;
mod dense;
mod dropout;
mod gru;
mod init;
mod loss;
mod model;
mod tcn;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use arch::{
    build_artic_model, build_ctc_model, build_regression_model, install_donor_grus, transplant_gru_weights,
    CtcModelOptions, Variant,
};
pub use batchnorm::{batchnorm_forward, BatchNorm, BatchNormParams, BN_EPSILON, BN_MOMENTUM};
pub use dense::{dense_forward, Dense, DenseParams};
pub use dropout::{dropout_forward, Dropout};
pub use gru::{gru_forward, Gru, GruParams};
pub use init::glorot_uniform;
pub use loss::{log_softmax, mse_loss, softmax};
pub use model::{backprop, Gradients, Layer, LayerKind, Model};
pub use tcn::{tcn_forward, CausalConv, TcnBlock, TcnBlockParams, DEFAULT_DILATIONS};
pub use tensor::Tensor;

/// Training mode samples dropout masks and uses batch statistics; inference
/// mode is deterministic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}
