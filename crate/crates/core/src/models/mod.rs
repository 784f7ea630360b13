//! Small trainable models: an MLP classifier, an LSTM encoder-decoder, and an
//! LSTM sequence tagger.

mod lstm;
mod mlp;
mod seq2seq;
mod tagger;
mod vocab;

pub use lstm::{Lstm, LstmNodes};
pub use mlp::{Head, Mlp};
pub use seq2seq::{DecodeMode, Decoded, Seq2Seq, TeacherForced};
pub(crate) use seq2seq::sample_log_row;
pub use tagger::{TagOutput, Tagger};
pub use vocab::Vocab;

/// Default embedding width.
pub const EMBED_DIM: usize = 32;
/// Default hidden width for LSTMs and MLP hidden layers.
pub const HIDDEN_DIM: usize = 64;
/// Parameters are initialized uniformly in `[-INIT_BOUND, INIT_BOUND]`.
pub const INIT_BOUND: f64 = 0.08;
