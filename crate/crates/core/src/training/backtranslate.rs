use crate::data::{TextPair, RESERVED_TOKENS, UNK};
use crate::decoder::translate;
use crate::error::{Error, Result};
use crate::model::Mode;
use crate::numerics::Real;

use super::Checkpoint;

/// Translates monolingual target sentences with a text-only reverse model
/// into synthetic `(source, target, image)` triples, one per input line.
///
/// A sentence the reverse model cannot translate (an empty line, or an
/// empty hypothesis) gets the single source token `<unk>` so the output
/// stays line-aligned with the input.
pub fn backtranslate<F: Real>(
    reverse: &Checkpoint<F>,
    mono_target: &[Vec<String>],
    images: Option<&[Vec<f32>]>,
    beam: usize,
) -> Result<Vec<TextPair>> {
    let mode = reverse.model.config.mode;
    if mode != Mode::TextOnly {
        return Err(Error::Config(format!(
            "the reverse model must be TEXT_ONLY, found {mode}"
        )));
    }
    if let Some(im) = images {
        if im.len() != mono_target.len() {
            return Err(Error::Alignment {
                what: "feature rows and monolingual sentences differ".into(),
                left: im.len(),
                right: mono_target.len(),
            });
        }
    }
    let unk = || vec![RESERVED_TOKENS[UNK].to_owned()];
    let mut out = Vec::with_capacity(mono_target.len());
    for (i, target) in mono_target.iter().enumerate() {
        let source = if target.is_empty() {
            unk()
        } else {
            let ids = reverse.src_vocab.encode(target);
            let hyp = translate(&reverse.model, &ids, None, beam)?;
            let words = reverse.tgt_vocab.decode(&hyp);
            if words.is_empty() {
                unk()
            } else {
                words
            }
        };
        out.push(TextPair {
            source,
            target: target.clone(),
            image: images.map(|im| im[i].clone()),
        });
    }
    Ok(out)
}

/// Concatenates the original corpus with synthetic pairs. Either both or
/// neither must carry image features.
pub fn merge_corpora(original: Vec<TextPair>, synthetic: Vec<TextPair>) -> Result<Vec<TextPair>> {
    let has_images = |v: &[TextPair]| v.first().map(|p| p.image.is_some());
    if let (Some(a), Some(b)) = (has_images(&original), has_images(&synthetic)) {
        if a != b {
            return Err(Error::InvalidInput(
                "cannot merge corpora with and without image features".into(),
            ));
        }
    }
    let mut merged = original;
    merged.extend(synthetic);
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Vocabulary;
    use crate::model::{Model, ModelConfig};

    fn reverse(mode: Mode) -> Checkpoint<f64> {
        Checkpoint {
            model: Model::new(ModelConfig::tiny(mode)).unwrap(),
            epoch: 1,
            dev_bleu: None,
            src_vocab: Vocabulary::from_tokens(["der", "die", "das", "ein", "eine"]).unwrap(),
            tgt_vocab: Vocabulary::from_tokens(["the", "a", "an", "one"]).unwrap(),
        }
    }

    #[test]
    fn cardinality_and_alignment() {
        let rev = reverse(Mode::TextOnly);
        assert!(backtranslate(&rev, &[], None, 1).unwrap().is_empty());
        let mono: Vec<Vec<String>> = ["der hund", "", "eine katze"]
            .iter()
            .map(|l| crate::data::tokenize(l))
            .collect();
        let images = vec![vec![0.5f32; 3]; 3];
        let out = backtranslate(&rev, &mono, Some(&images), 1).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[1].source, vec!["<unk>".to_string()]);
        for (p, m) in out.iter().zip(&mono) {
            assert_eq!(&p.target, m);
            assert!(!p.source.is_empty());
            assert_eq!(p.image.as_deref(), Some(&[0.5f32; 3][..]));
        }
        assert!(matches!(
            backtranslate(&rev, &mono, Some(&images[..2]), 1),
            Err(Error::Alignment { .. })
        ));
    }

    #[test]
    fn image_reverse_model_is_rejected() {
        let rev = reverse(Mode::ImgD);
        assert!(matches!(backtranslate(&rev, &[], None, 1), Err(Error::Config(_))));
    }

    #[test]
    fn merge_counts() {
        let p = |img: bool| TextPair {
            source: vec!["a".into()],
            target: vec!["b".into()],
            image: img.then(|| vec![1.0]),
        };
        assert_eq!(merge_corpora(vec![p(true); 4], vec![p(true); 3]).unwrap().len(), 7);
        assert!(merge_corpora(vec![p(true)], vec![p(false)]).is_err());
    }
}
