//! Analysis routines for small-story corpora and the tokenizers and models
//! trained on them.

pub mod corpus;
pub mod diversity;
pub mod entropy;
pub mod error;
pub mod genorch;
pub mod judgestats;
pub mod morph;
pub mod promptgen;
pub mod spectral;
pub mod stats;
pub mod text;
pub mod tokenize;

pub use corpus::{DedupReport, SkipReport, Split, StoryCorpus, StoryRecord};
pub use diversity::{DiversityReport, PairScores, Pairing};
pub use entropy::{EntropyQuery, FrequencyDistribution};
pub use error::{Error, Result};
pub use genorch::{OrchestratorConfig, Provider, RunLedger, ScriptedMock};
pub use judgestats::{CorrelationResult, Metric, ScoreRecord};
pub use morph::{MorphEvalEntry, MorphScoreReport};
pub use promptgen::{PromptBatch, PromptKey, PromptLexicon, UniquenessMode};
pub use spectral::{SpectralReport, WeightMatrix};
pub use tokenize::{FertilityReport, TokenId, TokenizerModel, TokenizerOptions};
