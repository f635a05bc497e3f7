use crate::data::{Batch, Example, NUM_RESERVED};
use crate::error::Result;
use crate::model::{Mode, Model, ModelConfig};
use crate::numerics::{finite_diff_check, GradCheckReport, ParameterStore, Rng};

use super::sequence_nll;

/// Standard deviation used to randomise every parameter before a gradient
/// check. The training initialisation (σ = 0.01) gives gradients too small
/// to compare meaningfully.
pub const GRADCHECK_STD: f64 = 0.3;

/// Two random examples for a tiny model.
pub fn gradcheck_examples(config: &ModelConfig, rng: &mut Rng) -> Vec<Example> {
    let mut token = |vocab: usize| NUM_RESERVED + rng.below(vocab - NUM_RESERVED);
    let mut out = Vec::new();
    for (n, m) in [(3, 2), (2, 3)] {
        let source_ids = (0..n).map(|_| token(config.src_vocab_size)).collect();
        let target_ids = (0..m).map(|_| token(config.tgt_vocab_size)).collect();
        out.push(Example {
            source_ids,
            target_ids,
            image: None,
        });
    }
    if config.mode.uses_image() {
        for ex in &mut out {
            ex.image = Some((0..config.image_dim).map(|_| rng.normal(0.0, 1.0) as f32).collect());
        }
    }
    out
}

/// Checks the batch loss gradient of a tiny 64-bit model in `mode` against
/// finite differences, with dropout and clipping off.
///
/// `corrupt` names a parameter whose analytic gradient is doubled before
/// the comparison; it exists to exercise the failure path.
pub fn tiny_gradcheck(mode: Mode, seed: u64, epsilon: f64, corrupt: Option<&str>) -> Result<GradCheckReport> {
    let config = ModelConfig {
        init_seed: seed,
        ..ModelConfig::tiny(mode)
    };
    let mut model: Model<f64> = Model::new(config)?;
    let mut rng = Rng::new(seed);
    model.randomize(GRADCHECK_STD, &mut rng);
    let examples = gradcheck_examples(&model.config, &mut rng);
    let batch = Batch::from_examples(&examples, &[0, 1]);
    let corrupt_id = corrupt.map(|n| model.store.require(n)).transpose()?;

    let mut shell = Model {
        config: model.config.clone(),
        store: ParameterStore::new(),
        layout: model.layout,
    };
    finite_diff_check(
        |store| {
            std::mem::swap(&mut shell.store, store);
            let r = sequence_nll(&mut shell, &batch, &[]);
            std::mem::swap(&mut shell.store, store);
            if let Some(id) = corrupt_id {
                store.grad_mut(id).as_mut_slice().iter_mut().for_each(|g| *g *= 2.0);
            }
            r
        },
        &mut model.store,
        epsilon,
    )
}
