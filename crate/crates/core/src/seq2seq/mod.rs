//! LSTM encoder-decoder with post, input-feeding, pre-concat and
//! pre-highway attention, plus greedy generation and checkpoints.

mod checkpoint;
mod config;
mod model;

pub use checkpoint::Checkpoint;
pub use config::{AttentionVariant, ModelConfig};
pub use model::{
    highway_gate, DecoderStepState, DropoutRng, Encoded, ForwardOutput, Seq2Seq, Session, StepOutput,
};

/// Reserved vocabulary ids shared by the model and the vocabulary.
pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
/// Joins history turns inside a message.
pub const SEP: usize = 4;
pub const NUM_RESERVED: usize = 5;

/// Default response length cap.
pub const DEFAULT_MAX_LEN: usize = 32;
