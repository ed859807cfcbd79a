//! MLP encoder/decoder VAE with canonical, β, correlation-penalty and
//! projection variants.

mod checkpoint;
mod mlp;
mod train;
mod vae;

pub use checkpoint::{load_checkpoint, save_checkpoint, Manifest, ProjectionManifest, MANIFEST_FILE, PARAMS_FILE, PROJECTION_FILE};
pub use mlp::{Dense, Mlp};
pub use train::{train, Adam, EpochRecord, TrainConfig, TrainingTrace};
pub use vae::{
    bce_per_row, kl_diag_gaussian, DEFAULT_HIDDEN, LatentSample, LossGraph, LossParts, ModelConfig, ParamVars, ProjectionConfig, VaeModel,
    Variant,
};
