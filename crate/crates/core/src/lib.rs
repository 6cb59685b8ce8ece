//! Progressive surrogate-guided search over multimodal fusion architectures.
//!
//! A fusion architecture is an ordered list of triplets `(gm, gn, gp)`; each
//! triplet picks one feature tap from each modality network and an
//! activation for one dense fusion layer. The search unfolds the space one
//! layer at a time, sampling candidates from a recurrent surrogate with an
//! annealed temperature, and trains sampled networks briefly with shared
//! fusion weights.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod formats;
pub mod fusion;
pub mod modality;
pub mod pipeline;
pub mod report;
pub mod search;
pub mod space;
pub mod surrogate;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use config::RunConfig;
pub use search::{mfas_search, random_search, select_final, DeterministicOracle, Evaluator, RealTrainer, SearchConfig};
pub use space::{Architecture, SpaceConfig, Triplet};
pub use surrogate::{SurrogateConfig, SurrogateModel};
