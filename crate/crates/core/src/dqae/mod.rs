//! Decoupled query autoencoder: the first frame is compressed into spatial
//! query tokens, frame-wise residuals against it into temporal query tokens,
//! and both are decoded back through patch queries and a linear pixel head.

mod block;
mod model;
mod tokens;

pub use block::{DqaeBlock, Layout, QueryDecoder, QueryEncoder, SelfBlock};
pub use model::{is_temporal_param, ClipTokens, ForwardPass, FrozenCodes, QueryBank, SweetTok};
pub use tokens::{format_tokens, parse_tokens, read_tokens, write_tokens, TokenRecord};
