//! Loss, Adadelta, variational dropout, checkpoints, the epoch loop with
//! early stopping, and back-translation.

mod adadelta;
mod backtranslate;
mod checkpoint;
mod dropout;
mod gradcheck;
mod loss;
mod trainer;

pub use crate::model::ModelConfig;
pub use adadelta::{adadelta_update, clip_gradients};
pub use backtranslate::{backtranslate, merge_corpora};
pub use checkpoint::{read_checkpoint_header, Checkpoint, CheckpointHeader, ParamInfo};
pub use dropout::{dropout_mask, DropoutMasks};
pub use gradcheck::{gradcheck_examples, tiny_gradcheck, GRADCHECK_STD};
pub use loss::{batch_target_tokens, evaluate_nll, sequence_nll};
pub use trainer::{bleu_on, train, BleuScorer, DevScorer, EpochRecord, TrainOptions, TrainOutcome};
