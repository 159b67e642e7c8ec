//! End-to-end stages shared by the command line and the acceptance suite:
//! configuration, checkpoint bundles, training, reconstruction, generation
//! and in-painting.

mod bundle;
mod config;
mod run;

pub use bundle::{read_latents, write_latents, FlowBundle, LatentRecord, VaeBundle, BUNDLE_VERSION};
pub use config::{DataConfig, EvalConfig, RunConfig, SampleConfig, Schedule};
pub use run::{
    complex_cloud, encode_records, generate, generate_many, inpaint, prepare_samples, reconstruct, record_seed,
    topology_matches, train_flow, train_vae, unpadded_sample, wireframe_identical, FixSet, GenerateOptions, Generated,
    Inpainted, Reconstruction, ReconstructionReport,
};

#[cfg(test)]
mod tests;
