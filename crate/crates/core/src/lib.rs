//! Community-based autoencoder training with representation probes.
//!
//! The crate trains pools of MLP encoders and decoders where every gradient
//! step pairs one encoder with one decoder sampled uniformly at random, then
//! measures what that does to the learned representations: how easily a linear
//! probe can tell encoders apart, how well latents predict concept labels, and
//! how closely latent geometry tracks human feature norms. An experiment
//! runner sweeps community size, entropy-penalty weight, and seed, writing an
//! append-only metrics log that downstream tooling can re-aggregate exactly.
//!
//! Modules, bottom-up:
//! - [`tensor`]: tape-based reverse-mode autodiff over dense `f64` tensors.
//! - [`check`]: finite-difference gradient validation helpers.
//! - [`nets`]: MLP encoders/decoders, Glorot init, Adam, checkpoints.
//! - [`data`]: IDX images, feature-norm CSVs, synthetic concept generator.
//! - [`probes`]: encoder-identity and concept probes, RSA against norms.
//! - [`community`]: the random-pairing training loop itself.
//! - [`exp`]: config-driven sweeps, metrics logs, summaries, plot export.

pub mod check;
pub mod community;
pub mod data;
pub mod exp;
pub mod nets;
pub mod probes;
pub mod tensor;

pub use community::{Community, CommunityError, TrainConfig, TrainStepReport};
pub use data::{DataError, Dataset, FeatureNorms, SyntheticSpec};
pub use exp::{ExpError, ExperimentConfig, MetricsRecord, RunFailure, SweepSummary};
pub use nets::{
    AdamHyper, AdamState, Checkpoint, DecoderParams, EncoderParams, Mlp, NetShape, NetsError,
};
pub use probes::{LinearClassifier, ProbeConfig, ProbeError, ProbeReport, RsaReport};
pub use tensor::{Tape, Tensor, TensorError, TensorId};
