//! Minimal differentiable kernel set: matrices, a reverse-mode tape,
//! parameter storage with SGD, transformer blocks, and checkpoint I/O.

pub mod checkpoint;
pub mod layers;
pub mod matrix;
pub mod params;
pub mod tape;

pub use layers::{
    linear, mlp, multi_head_attention, positional_encoding, transformer_decoder,
    transformer_encoder, Activation, NetConfig, NetCtx,
};
pub use matrix::Matrix;
pub use params::ParameterSet;
pub use tape::{sigmoid, softmax_rows_value, Tape, Var};
