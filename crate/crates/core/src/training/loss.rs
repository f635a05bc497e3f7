use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::network::{backward_pair, forward_pair, PairForward};
use crate::numerics::Real;

use super::DropoutMasks;

/// Number of predicted tokens in a batch: every real target token plus one
/// `EOS` per row.
pub fn batch_target_tokens(batch: &Batch) -> usize {
    batch.target_tokens() + batch.len()
}

/// Teacher-forced negative log-likelihood of `batch`, normalised by the
/// number of predicted tokens. Its gradient is accumulated into the store.
///
/// `masks` holds one set of dropout masks per row, or is empty for no
/// dropout. Nothing is accumulated when the loss is not finite.
pub fn sequence_nll<F: Real>(model: &mut Model<F>, batch: &Batch, masks: &[DropoutMasks<F>]) -> Result<F> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if !masks.is_empty() && masks.len() != batch.len() {
        return Err(Error::InvalidInput(format!(
            "{} dropout mask sets for a batch of {}",
            masks.len(),
            batch.len()
        )));
    }
    let none = DropoutMasks::none();
    let mask_for = |b: usize| masks.get(b).unwrap_or(&none);

    let mut passes: Vec<PairForward<F>> = Vec::with_capacity(batch.len());
    let mut ll = F::zero();
    for b in 0..batch.len() {
        let (src, tgt) = batch.row(b);
        let fwd = forward_pair(model, src, tgt, batch.image(b), mask_for(b))?;
        ll += fwd.log_likelihood;
        passes.push(fwd);
    }
    let tokens = F::lit(batch_target_tokens(batch) as f64);
    let loss = -ll / tokens;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!(
            "loss is {loss} on the batch of examples {:?}",
            batch.indices
        )));
    }
    let scale = F::one() / tokens;
    for (b, fwd) in passes.iter().enumerate() {
        backward_pair(model, fwd, mask_for(b), scale);
    }
    Ok(loss)
}

/// Normalised negative log-likelihood without dropout or gradients.
pub fn evaluate_nll<F: Real>(model: &Model<F>, batch: &Batch) -> Result<F> {
    let none = DropoutMasks::none();
    let mut ll = F::zero();
    for b in 0..batch.len() {
        let (src, tgt) = batch.row(b);
        ll += forward_pair(model, src, tgt, batch.image(b), &none)?.log_likelihood;
    }
    Ok(-ll / F::lit(batch_target_tokens(batch) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Example;
    use crate::model::{Mode, ModelConfig};
    use crate::numerics::{finite_diff_check, ParameterStore, Rng};

    fn examples(mode: Mode, cfg: &ModelConfig) -> Vec<Example> {
        let image = |s: f32| {
            mode.uses_image()
                .then(|| (0..cfg.image_dim).map(|i| s * (i as f32 * 0.7).sin()).collect())
        };
        vec![
            Example {
                source_ids: vec![4, 7, 5],
                target_ids: vec![6, 4],
                image: image(1.0),
            },
            Example {
                source_ids: vec![8, 3],
                target_ids: vec![5, 7, 7],
                image: image(-0.5),
            },
        ]
    }

    #[test]
    fn zero_parameters_give_log_vocab() {
        let mut m: Model<f64> = Model::new(ModelConfig::tiny(Mode::ImgD)).unwrap();
        for id in m.store.ids().collect::<Vec<_>>() {
            m.store.value_mut(id).fill(0.0);
        }
        let ex = examples(Mode::ImgD, &m.config);
        let batch = Batch::from_examples(&ex, &[0, 1]);
        let loss = sequence_nll(&mut m, &batch, &[]).unwrap();
        assert!((loss - 8f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn duplicating_examples_keeps_loss() {
        let mut m: Model<f64> = Model::new(ModelConfig::tiny(Mode::TextOnly)).unwrap();
        m.randomize(0.5, &mut Rng::new(2));
        let ex = examples(Mode::TextOnly, &m.config);
        let once = evaluate_nll(&m, &Batch::from_examples(&ex, &[0, 1])).unwrap();
        let twice = evaluate_nll(&m, &Batch::from_examples(&ex, &[0, 1, 0, 1])).unwrap();
        assert!((once - twice).abs() < 1e-14);
        let with_grad = sequence_nll(&mut m, &Batch::from_examples(&ex, &[0, 1]), &[]).unwrap();
        assert_eq!(once, with_grad);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for mode in [Mode::TextOnly, Mode::ImgE] {
            let mut m: Model<f64> = Model::new(ModelConfig::tiny(mode)).unwrap();
            m.randomize(0.3, &mut Rng::new(3));
            let ex = examples(mode, &m.config);
            let batch = Batch::from_examples(&ex, &[0, 1]);
            let mut shell = Model {
                config: m.config.clone(),
                store: ParameterStore::new(),
                layout: m.layout,
            };
            let report = finite_diff_check(
                |store| {
                    std::mem::swap(&mut shell.store, store);
                    let r = sequence_nll(&mut shell, &batch, &[]);
                    std::mem::swap(&mut shell.store, store);
                    r
                },
                &mut m.store,
                1e-3,
            )
            .unwrap();
            assert!(report.max_rel_error() < 1e-4, "{mode}: {:?}", report.failing(1e-4));
        }
    }

    #[test]
    fn dropout_gradient_matches_finite_differences() {
        let mut cfg = ModelConfig::tiny(Mode::Img2WD);
        cfg.dropout_embed = 0.2;
        cfg.dropout_image = 0.5;
        cfg.dropout_hidden = 0.5;
        let mut m: Model<f64> = Model::new(cfg).unwrap();
        m.randomize(0.3, &mut Rng::new(4));
        let ex = examples(Mode::Img2WD, &m.config);
        let batch = Batch::from_examples(&ex, &[0, 1]);
        let mut rng = Rng::new(5);
        let masks: Vec<DropoutMasks<f64>> = (0..2).map(|_| DropoutMasks::sample(&m.config, &mut rng)).collect();
        assert!(masks[0].image_word.is_some());
        let mut shell = Model {
            config: m.config.clone(),
            store: ParameterStore::new(),
            layout: m.layout,
        };
        let report = finite_diff_check(
            |store| {
                std::mem::swap(&mut shell.store, store);
                let r = sequence_nll(&mut shell, &batch, &masks);
                std::mem::swap(&mut shell.store, store);
                r
            },
            &mut m.store,
            1e-3,
        )
        .unwrap();
        assert!(report.max_rel_error() < 1e-4, "{:?}", report.failing(1e-4));
    }

    #[test]
    fn image_parameters_receive_gradient() {
        let mut m: Model<f64> = Model::new(ModelConfig::tiny(Mode::ImgE)).unwrap();
        m.randomize(0.3, &mut Rng::new(6));
        let ex = examples(Mode::ImgE, &m.config);
        sequence_nll(&mut m, &Batch::from_examples(&ex, &[0, 1]), &[]).unwrap();
        for name in ["img.W_I1", "img.b_I1", "img.src.W_I2", "img.src.b_I2", "img.enc.W_f", "img.enc.b_f", "img.enc.W_b", "img.enc.b_b"] {
            let id = m.store.require(name).unwrap();
            assert!(m.store.grad(id).as_slice().iter().any(|&g| g != 0.0), "{name}");
        }
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut m: Model<f64> = Model::new(ModelConfig::tiny(Mode::TextOnly)).unwrap();
        let id = m.store.require("readout.b_o").unwrap();
        m.store.value_mut(id).set(0, 5, f64::NAN);
        let ex = examples(Mode::TextOnly, &m.config);
        let err = sequence_nll(&mut m, &Batch::from_examples(&ex, &[1, 0]), &[]).unwrap_err();
        assert!(matches!(err, Error::Numeric(ref s) if s.contains("[1, 0]")), "{err}");
        assert_eq!(m.store.grad_norm(), 0.0);
    }
}
