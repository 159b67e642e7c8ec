//! Set VAE over k-cell particles: a topology-aware encoder to per-particle
//! latents and a two-phase compositional decoder.
//!
//! Phase I predicts types, anchors and links from the decoded features.
//! Phase II predicts edge curves whose endpoints are the decoded vertex
//! anchors, and face poses and surfaces conditioned on their boundary.

mod decode;
mod loss;
mod model;
mod sample;
mod train;

pub use decode::{decode_latents, Decoded, KnownCells};
pub use loss::{bce_with_logits, chamfer_l1, focal_loss, kl_divergence, LossVars};
pub use model::{argmax_type, CcVae, VaeConfig, EDGE_PARAMS, POSE_PARAMS};
pub use sample::{EdgeTarget, FaceTarget, VaeSample};
pub use train::{encode_mean, encode_params, evaluate, loss_values, VaeLossReport, VaeMetrics, VaeTrainer};

#[cfg(test)]
mod tests;
