//! Attention-based neural machine translation with global image features.
//!
//! The engine is a bidirectional GRU encoder with an additive-attention GRU
//! decoder. A single global image feature vector can be injected in three
//! places: as pseudo-words around the source sentence, as the initial
//! encoder hidden states, or as an extra input to the decoder's initial
//! state. Everything (forward passes, hand-written backward passes, Adadelta,
//! decoding, BLEU/chrF) is implemented directly on dense row-major matrices.

pub mod attention;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod network;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
pub use model::{Mode, ModelConfig, Precision};
