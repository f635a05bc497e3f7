use crate::model::ModelConfig;
use crate::numerics::{Real, Rng};

/// Inverted-dropout masks for one sequence. Each mask is drawn once and
/// reused at every time step; `None` means the layer is not dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks<F> {
    pub src_embed: Option<Vec<F>>,
    pub tgt_embed: Option<Vec<F>>,
    pub image: Option<Vec<F>>,
    /// Applied to the projected image where it enters as a source word.
    pub image_word: Option<Vec<F>>,
    pub enc_fwd_input: Option<Vec<F>>,
    pub enc_fwd_rec: Option<Vec<F>>,
    pub enc_bwd_input: Option<Vec<F>>,
    pub enc_bwd_rec: Option<Vec<F>>,
    pub dec_input: Option<Vec<F>>,
    pub dec_rec: Option<Vec<F>>,
    pub readout: Option<Vec<F>>,
}

impl<F> Default for DropoutMasks<F> {
    fn default() -> Self {
        Self {
            src_embed: None,
            tgt_embed: None,
            image: None,
            image_word: None,
            enc_fwd_input: None,
            enc_fwd_rec: None,
            enc_bwd_input: None,
            enc_bwd_rec: None,
            dec_input: None,
            dec_rec: None,
            readout: None,
        }
    }
}

/// Entries are 0 with probability `rate` and `1/(1−rate)` otherwise.
pub fn dropout_mask<F: Real>(len: usize, rate: f64, rng: &mut Rng) -> Option<Vec<F>> {
    if rate <= 0.0 {
        return None;
    }
    let keep = F::lit(1.0 / (1.0 - rate));
    Some(
        (0..len)
            .map(|_| if rng.uniform() < rate { F::zero() } else { keep })
            .collect(),
    )
}

impl<F: Real> DropoutMasks<F> {
    /// No dropout anywhere (evaluation mode).
    pub fn none() -> Self {
        Self::default()
    }

    pub fn sample(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let (pe, pi, ph) = (cfg.dropout_embed, cfg.dropout_image, cfg.dropout_hidden);
        let image = if cfg.mode.uses_image() {
            dropout_mask(cfg.image_dim, pi, rng)
        } else {
            None
        };
        let image_word = if cfg.mode.image_words() > 0 {
            dropout_mask(cfg.d_x, pi, rng)
        } else {
            None
        };
        Self {
            src_embed: dropout_mask(cfg.d_x, pe, rng),
            tgt_embed: dropout_mask(cfg.d_y, pe, rng),
            image,
            image_word,
            enc_fwd_input: dropout_mask(cfg.d_x, ph, rng),
            enc_fwd_rec: dropout_mask(cfg.d_h, ph, rng),
            enc_bwd_input: dropout_mask(cfg.d_x, ph, rng),
            enc_bwd_rec: dropout_mask(cfg.d_h, ph, rng),
            dec_input: dropout_mask(cfg.d_y + 2 * cfg.d_h, ph, rng),
            dec_rec: dropout_mask(cfg.d_s, ph, rng),
            readout: dropout_mask(cfg.d_readout(), ph, rng),
        }
    }

    pub fn is_none(&self) -> bool {
        *self == Self::none()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Mode;

    #[test]
    fn mean_is_preserved() {
        let mut rng = Rng::new(17);
        for rate in [0.2, 0.5] {
            let m: Vec<f64> = dropout_mask(100_000, rate, &mut rng).unwrap();
            let mean = m.iter().sum::<f64>() / m.len() as f64;
            assert!((mean - 1.0).abs() < 0.02, "rate {rate}: mean {mean}");
            let zeros = m.iter().filter(|&&v| v == 0.0).count() as f64 / m.len() as f64;
            assert!((zeros - rate).abs() < 0.01);
        }
    }

    #[test]
    fn zero_rate_gives_no_mask() {
        let mut cfg = ModelConfig::tiny(Mode::ImgD);
        let m: DropoutMasks<f64> = DropoutMasks::sample(&cfg, &mut Rng::new(1));
        assert!(m.is_none());
        cfg.dropout_hidden = 0.5;
        let m: DropoutMasks<f64> = DropoutMasks::sample(&cfg, &mut Rng::new(1));
        assert_eq!(m.dec_rec.as_ref().unwrap().len(), cfg.d_s);
        assert_eq!(m.dec_input.as_ref().unwrap().len(), cfg.d_y + 2 * cfg.d_h);
        assert!(m.image.is_none());
    }

    #[test]
    fn text_only_has_no_image_mask() {
        let mut cfg = ModelConfig::tiny(Mode::TextOnly);
        cfg.dropout_image = 0.5;
        let m: DropoutMasks<f32> = DropoutMasks::sample(&cfg, &mut Rng::new(1));
        assert!(m.image.is_none());
    }
}
