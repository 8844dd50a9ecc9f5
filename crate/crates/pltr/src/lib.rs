//! Few-shot cross-domain NER: mine type-related features from a source
//! corpus, generate per-example prompts from them, jointly train a token
//! tagger with a feature-selection head, and evaluate in- and out-of-domain.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod graph;
pub mod manifest;
pub mod neural;
pub mod prompting;
pub mod synth;
pub mod training;
pub mod trf;

pub use error::{Error, Result};
