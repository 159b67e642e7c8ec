//! Rectified flow over latent sets: straight-path training, Euler sampling,
//! duplicate clustering, in-painting and optional point-cloud conditioning.
//!
//! Noise sits at `t = 0` and data at `t = 1`.

mod model;
mod ops;
mod train;

pub use model::{time_features, FlowBackbone, FlowConfig};
pub use ops::{
    cluster_inference_particles, euler_integrate, flow_loss, median_nn_distance, rf_interpolate_and_target,
    sample_t_logit_normal, Clusters, Inpaint, LatentSet, LatentStats, DIRECTION_WEIGHT,
};
pub use train::{
    sample_latents, sample_loss, FlowDraw, FlowLossReport, FlowSample, FlowTrainConfig, FlowTrainer, SampleOptions,
    INPAINT_FRACTION,
};
