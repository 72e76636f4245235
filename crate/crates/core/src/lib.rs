//! Topic-tracking models for multi-party, multi-turn dialogue.
//!
//! A small transformer encoder is pretrained with masked language modeling and
//! same-topic prediction, then a shared topic-attention layer feeds three task
//! heads trained jointly: topic prediction, response selection and
//! reply-to disentanglement. Metrics and a synthetic entangled-conversation
//! generator are included for end-to-end validation.
//!
//! The crate is `no_std` and only needs `alloc`. File formats and the command
//! line live in the `topictrack` crate.
#![no_std]

extern crate alloc;

pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod graph;
pub mod heads;
pub mod model;
pub mod optim;
pub mod params;
pub mod report;
pub mod tensor;
pub mod textenc;
pub mod topic;

use alloc::string::String;

pub use rand_chacha::ChaCha8Rng as Rng;

/// Seeded random source used throughout the crate.
pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("shape mismatch: {0}")]
    Shape(&'static str),
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },
    #[error("sequence length {len} exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("non-finite loss {0}")]
    NonFiniteLoss(f64),
    #[error("empty input: {0}")]
    Empty(&'static str),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field,
            reason: reason.into(),
        }
    }
}
