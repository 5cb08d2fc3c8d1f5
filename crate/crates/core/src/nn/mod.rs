//! Dense f64 tensors, a reverse-mode tape and the layer set of the policy.

mod adam;
mod checkpoint;
mod gradcheck;
mod layers;
mod tape;
mod tensor;

use alloc::string::String;

pub use adam::Adam;
pub use checkpoint::{decode_checkpoint, encode_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{analytic_grads, grad_check, grad_check_against, numeric_grad, relative_error};
pub use layers::{
    init_block, init_layer_norm, init_linear, init_mhsa, layer_norm, linear, mhsa, transformer_block,
    xavier_uniform, MhsaOut, LN_EPS,
};
pub use tape::{gelu, Gradients, Param, ParamId, ParamStore, Tape, Var};
pub use tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}
