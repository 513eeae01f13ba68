//! Latent-diffusion singing voice conversion.
//!
//! A VAE maps waveforms to a compact latent sequence and back through a
//! neural source-filter decoder. A conditional DDPM in that latent space
//! generates the target singer's latent from source content, a shifted F0
//! contour and a target speaker embedding, with classifier-free guidance
//! over the singer conditions.

pub mod audio;
pub mod checkpoint;
pub mod conditioning;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod nn;
pub mod pipeline;
pub mod pitch;
pub mod rng;
pub mod schedule;
pub mod vae;

pub use audio::{AudioClip, DatasetManifest, LabeledClip, Split};
pub use checkpoint::{Checkpoint, CheckpointKind};
pub use conditioning::{ConditionSet, ContentFeatures, SpeakerEmbedding};
pub use config::{Config, GuidanceConfig};
pub use error::{Result, SvcError};
pub use eval::{MetricsReport, Scenario, Trial};
pub use pipeline::{ConversionRequest, ConversionResult, Converter};
pub use pitch::{F0Bins, F0Contour};
pub use schedule::NoiseSchedule;
pub use vae::{Latent, PosteriorStats};
