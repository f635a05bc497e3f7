use std::fmt;
use std::path::Path;

use crate::data::{make_batches, Example, Vocabulary};
use crate::decoder::greedy_decode;
use crate::error::{Error, Result};
use crate::evaluation::bleu4;
use crate::model::{Model, ModelConfig};
use crate::numerics::{Real, Rng};

use super::{adadelta_update, batch_target_tokens, clip_gradients, sequence_nll, Checkpoint, DropoutMasks};

/// Scores a model on held-out data after each epoch. Higher is better.
pub trait DevScorer<F> {
    fn score(&mut self, model: &Model<F>, epoch: usize) -> Result<f64>;
}

impl<F, T: FnMut(&Model<F>, usize) -> Result<f64>> DevScorer<F> for T {
    fn score(&mut self, model: &Model<F>, epoch: usize) -> Result<f64> {
        self(model, epoch)
    }
}

/// Corpus BLEU4 of greedy translations against the gold targets.
pub struct BleuScorer<'a> {
    pub examples: &'a [Example],
}

impl<F: Real> DevScorer<F> for BleuScorer<'_> {
    fn score(&mut self, model: &Model<F>, _epoch: usize) -> Result<f64> {
        bleu_on(model, self.examples)
    }
}

/// Corpus BLEU4 (on token ids) of greedy translations of `examples`.
pub fn bleu_on<F: Real>(model: &Model<F>, examples: &[Example]) -> Result<f64> {
    let mut hyps = Vec::with_capacity(examples.len());
    for ex in examples {
        hyps.push(greedy_decode(model, &ex.source_ids, ex.image.as_deref(), None)?);
    }
    let refs: Vec<&[usize]> = examples.iter().map(|e| e.target_ids.as_slice()).collect();
    Ok(bleu4(&hyps, &refs)?.score)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Token-weighted mean training loss over the epoch.
    pub mean_loss: f64,
    pub dev_bleu: f64,
    pub best: bool,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch {} loss {:.6} dev_bleu {:.2}{}",
            self.epoch,
            self.mean_loss,
            self.dev_bleu,
            if self.best { " *" } else { "" }
        )
    }
}

#[derive(Debug)]
pub struct TrainOutcome<F> {
    /// Parameters from the epoch with the best dev score.
    pub best: Checkpoint<F>,
    pub history: Vec<EpochRecord>,
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Rewritten every time the dev score improves.
    pub checkpoint_path: Option<&'a Path>,
    /// Stop as soon as the dev score reaches this value.
    pub target_score: Option<f64>,
}

/// Trains from scratch with Adadelta and early stopping on the dev score:
/// each epoch shuffles, batches and steps through `train`, then scores the
/// model; training stops once `patience` consecutive epochs fail to
/// improve the best score, or after `max_epochs`.
pub fn train<F: Real, S: DevScorer<F>>(
    config: &ModelConfig,
    train: &[Example],
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    scorer: &mut S,
    options: TrainOptions<'_>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<F>> {
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut model: Model<F> = Model::new(config.clone())?;
    let rho = F::lit(config.adadelta_rho);
    let eps = F::lit(config.adadelta_eps);
    let clip = F::lit(config.clip_norm);
    let use_dropout = config.dropout_embed > 0.0 || config.dropout_hidden > 0.0 || config.dropout_image > 0.0;
    let mut shuffle_rng = Rng::new(config.shuffle_seed);
    let mut dropout_rng = Rng::new(config.dropout_seed);

    let snapshot = |model: &Model<F>, epoch: usize, bleu: f64| Checkpoint {
        model: model.clone(),
        epoch,
        dev_bleu: Some(bleu),
        src_vocab: src_vocab.clone(),
        tgt_vocab: tgt_vocab.clone(),
    };
    let mut best: Option<Checkpoint<F>> = None;
    let mut history = Vec::new();
    let mut stale = 0usize;
    for epoch in 1..=config.max_epochs {
        let batches = make_batches(train, config.batch_size, &mut shuffle_rng, config.sort_by_length);
        let (mut loss_sum, mut tokens) = (0.0f64, 0usize);
        for batch in &batches {
            let masks: Vec<DropoutMasks<F>> = if use_dropout {
                (0..batch.len())
                    .map(|_| DropoutMasks::sample(config, &mut dropout_rng))
                    .collect()
            } else {
                Vec::new()
            };
            let loss = sequence_nll(&mut model, batch, &masks)?;
            let n = batch_target_tokens(batch);
            loss_sum += loss.to_f64_lossless() * n as f64;
            tokens += n;
            clip_gradients(&mut model.store, clip);
            adadelta_update(&mut model.store, rho, eps);
        }
        let dev = scorer.score(&model, epoch)?;
        let improved = best.as_ref().is_none_or(|b| dev > b.dev_bleu.unwrap_or(f64::NEG_INFINITY));
        if improved {
            stale = 0;
            let ck = snapshot(&model, epoch, dev);
            if let Some(p) = options.checkpoint_path {
                ck.save(p)?;
            }
            best = Some(ck);
        } else {
            stale += 1;
        }
        let record = EpochRecord {
            epoch,
            mean_loss: loss_sum / tokens as f64,
            dev_bleu: dev,
            best: improved,
        };
        on_epoch(&record);
        history.push(record);
        if stale >= config.patience || options.target_score.is_some_and(|t| dev >= t) {
            break;
        }
    }
    let best = best.ok_or_else(|| Error::Config("max_epochs must be at least 1".into()))?;
    Ok(TrainOutcome { best, history })
}
