//! Transformer building blocks: parameters, multi-head attention, post-norm
//! encoder and decoder layers, and 2-D sinusoidal positional encoding.

mod attention;
mod ctx;
mod layers;
mod param;
mod position;

pub use attention::{attention, MultiHeadAttention};
pub use ctx::Ctx;
pub use layers::{DecoderLayer, EncoderLayer, FeedForward, LayerNorm, Linear, LAYER_NORM_EPS};
pub use param::{Bound, Param, ParamId, ParamStore};
pub use position::{positional_encoding, positional_encoding_with, DEFAULT_TEMPERATURE};
