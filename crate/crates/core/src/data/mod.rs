//! Vocabularies, corpus and feature-file ingestion, length filtering and
//! padded minibatches.

mod batch;
mod corpus;
mod features;
mod vocab;

pub use batch::{make_batches, Batch};
pub use corpus::{
    align_pairs, encode_pairs, load_parallel_corpus, read_lines, read_token_lines, tokenize,
    write_lines, Example, TextPair, DEFAULT_MAX_LEN,
};
pub use features::{feature_paths, read_features, write_features, FeatureHeader};
pub use vocab::{build_vocab, Vocabulary, BOS, EOS, NUM_RESERVED, PAD, RESERVED_TOKENS, UNK};
