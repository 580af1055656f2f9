//! Image-feature to caption decoding: vocabulary handling, the two-layer
//! LSTM language model, teacher-forced training, perplexity, and greedy /
//! beam-search generation.

mod generate;
mod model;
mod train;
mod vocab;

pub use generate::{generate_beam, generate_greedy, GenConfig};
pub use model::{perplexity, DecoderState, LanguageModel, LstmLayer, TapedLm};
pub use train::{lm_train_epochs, train_lm, EpochPerplexity, LmTrainConfig, LmTrainState};
pub use vocab::{TokenSequence, Vocabulary, BOS, BOS_TOKEN, EOS, EOS_TOKEN, UNK, UNK_TOKEN};

use thiserror::Error;

use crate::math::MathError;
use crate::optim::OptimError;

#[derive(Debug, Error)]
pub enum DecoderError {
    #[error(transparent)]
    Math(#[from] MathError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("vocabulary error: {0}")]
    Vocab(String),
    #[error("token index {index} out of range for vocabulary of {vocab}")]
    InvalidToken { index: u32, vocab: usize },
    #[error("feature dimension {got} does not match model dimension {expected}")]
    FeatureDim { got: usize, expected: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("io error on {0}: {1}")]
    Io(String, #[source] std::io::Error),
}
