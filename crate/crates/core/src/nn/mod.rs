//! Neural building blocks shared by the VAE and the flow backbone.

mod attention;
pub mod fourier;
mod gcn;
mod layers;
pub mod optim;

pub use attention::{AttentionBlock, CrossAttentionBlock, MultiHeadAttention};
pub use fourier::{fourier_dim, fourier_positional_encoding, fourier_rows};
pub use gcn::{normalized_adjacency, GcnLayer};
pub use layers::{swiglu_hidden, Activation, Embedding, Linear, Mlp, PointNet, RmsNorm, SwiGlu};
pub use optim::{AdamW, AdamWConfig, Ema};
