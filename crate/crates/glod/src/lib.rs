//! GLoD: layered global-local guidance for diffusion sampling.
//!
//! The crate provides a small sampling engine in which a stack of guidance
//! layers — full-image global conditions plus region-masked local
//! conditions — is composed into a single noise prediction at every
//! denoising step. Backends are pluggable via the [`denoiser::Denoiser`]
//! trait; two ship with the crate: a closed-form Gaussian-mixture model
//! and a tiny trainable MLP.

pub mod cli;
pub mod composer;
pub mod denoiser;
pub mod error;
pub mod grid;
pub mod layout;
pub mod sampler;
pub mod scene;
pub mod schedule;
pub mod world;

pub use composer::{BaseRef, Layer, LayerEntry, LayerStack, RegionMask, DEFAULT_GUIDANCE_WEIGHT};
pub use denoiser::{AnalyticDenoiser, Condition, Denoiser, MixtureComponent, MixtureSpec};
pub use error::{GlodError, Result};
pub use grid::{BoundingBox, Grid};
pub use layout::{LayoutConfig, LayoutTarget};
pub use sampler::{baseline_sample, glod_sample, SamplerConfig, Trace, TraceConfig};
pub use schedule::{Schedule, ScheduleKind, StepRule};
