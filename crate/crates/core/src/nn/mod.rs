//! Minimal differentiable kernel: dense matrices, affine maps, layer norm,
//! masked multi-head self-attention, GELU, dropout and the scalar link
//! functions, each with an exact hand-written backward pass.

pub mod attention;
pub mod gradcheck;
pub mod ops;
pub mod tensor;

pub use attention::{AttentionCache, MultiHeadAttention};
pub use ops::{
    dropout, dropout_backward, gelu, gelu_backward, gelu_scalar, layer_norm, layer_norm_backward, linear,
    linear_backward, sigmoid, softplus, DropoutMask, LayerNormCache, LN_EPS,
};
pub use tensor::{matmul, ParamLeaf, Tensor, Trans};
