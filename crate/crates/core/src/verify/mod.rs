//! Monte-Carlo and autodiff checks of the entanglement identities: the
//! cross-covariance between a latent coordinate and the decoder output with
//! that coordinate frozen, its Stein decomposition into covariance-weighted
//! mean partials, its vanishing under uncorrelated elliptical latents, and
//! entropy invariance under invertible affine maps.

mod battery;
mod decoder;
mod entangle;
mod entropy;
mod sampler;

pub use battery::{
    elliptical_battery, entropy_battery, stein_battery, write_entropy_csv, BatteryResult, Case, CaseResult,
    EntropyCaseResult, BATTERY_SAMPLES, BATTERY_SIZE, REQUIRED_PASSES, SIGMAS,
};
pub use decoder::{ConstantDecoder, Decoder, LinearDecoder, MlpDecoder};
pub use entangle::{
    elliptical_zero_check, mc_cross_cov, mean_stderr, stein_report, stein_rhs, EntanglementReport, MIN_SAMPLES,
};
pub use entropy::{
    abs_determinant, apply_affine, empirical_entropy, entropy_invariance_check, EntropyCheck, DET_TOLERANCE,
};
pub use sampler::{EllipticalSampler, Family};
