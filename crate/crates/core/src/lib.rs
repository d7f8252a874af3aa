//! Synthetic in-context-learning probes over token-id vocabularies, model
//! scoring backends, checkpoint sweeps, and the statistics and unembedding
//! analyses run over their results.

pub mod analysis;
pub mod archive;
pub mod data;
pub mod error;
pub mod model;
pub mod seed;
pub mod stats;
pub mod suda;
pub mod sweep;
pub mod taskgen;
pub mod vocab;

pub type TokenId = u32;

pub use error::{Error, Result};
pub use model::{Backend, BackendSpec, ScoreRequest, ScoreResult};
pub use stats::{CorrelationResult, GapSeries, JohansenResult, ScalingFit, TimeSeries};
pub use suda::{ScoreVariant, SudaConfig, SudaProfile, SvdFactors};
pub use sweep::{SampleResult, SweepManifest};
pub use taskgen::{SuiteSpec, TaskConfig, TaskInstance, TaskKind, TokenPool};
pub use vocab::{load_vocab, Vocabulary};
