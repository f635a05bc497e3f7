use std::fs;
use std::path::Path;

use super::features::read_features;
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_LEN: usize = 80;

/// A tokenized sentence pair with its optional image feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TextPair {
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub image: Option<Vec<f32>>,
}

/// One training triple in id space.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub source_ids: Vec<usize>,
    pub target_ids: Vec<usize>,
    pub image: Option<Vec<f32>>,
}

pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_owned).collect()
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_owned).collect())
}

pub fn read_token_lines(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(read_lines(path)?.iter().map(|l| tokenize(l)).collect())
}

pub fn write_lines<S: AsRef<str>>(path: &Path, lines: &[S]) -> Result<()> {
    let mut text = String::new();
    for l in lines {
        text.push_str(l.as_ref());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Zips sentence pairs with feature rows and drops every pair in which
/// either side is empty or longer than `max_len` tokens. Survivors keep
/// their relative order.
pub fn align_pairs(
    sources: Vec<Vec<String>>,
    targets: Vec<Vec<String>>,
    images: Option<Vec<Vec<f32>>>,
    max_len: usize,
) -> Result<Vec<TextPair>> {
    if sources.len() != targets.len() {
        return Err(Error::Alignment {
            what: "source and target line counts differ".into(),
            left: sources.len(),
            right: targets.len(),
        });
    }
    if let Some(im) = &images {
        if im.len() != sources.len() {
            return Err(Error::Alignment {
                what: "feature rows and sentence count differ".into(),
                left: im.len(),
                right: sources.len(),
            });
        }
    }
    let mut images = images.map(|v| v.into_iter());
    let mut out = Vec::with_capacity(sources.len());
    for (source, target) in sources.into_iter().zip(targets) {
        let image = images.as_mut().and_then(Iterator::next);
        let keep = |s: &[String]| !s.is_empty() && s.len() <= max_len;
        if keep(&source) && keep(&target) {
            out.push(TextPair {
                source,
                target,
                image,
            });
        }
    }
    Ok(out)
}

pub fn load_parallel_corpus(
    src_path: &Path,
    tgt_path: &Path,
    features_path: Option<&Path>,
    max_len: usize,
) -> Result<Vec<TextPair>> {
    let sources = read_token_lines(src_path)?;
    let targets = read_token_lines(tgt_path)?;
    let images = features_path.map(read_features).transpose()?;
    align_pairs(sources, targets, images, max_len)
}

pub fn encode_pairs(pairs: &[TextPair], src_vocab: &Vocabulary, tgt_vocab: &Vocabulary) -> Vec<Example> {
    pairs
        .iter()
        .map(|p| Example {
            source_ids: src_vocab.encode(&p.source),
            target_ids: tgt_vocab.encode(&p.target),
            image: p.image.clone(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::write_features;
    use proptest::prelude::*;

    fn words(n: usize) -> String {
        vec!["w"; n].join(" ")
    }

    #[test]
    fn over_length_pair_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("s");
        let tgt = dir.path().join("t");
        write_lines(&src, &[words(3), words(81), words(80)]).unwrap();
        write_lines(&tgt, &[words(2), words(5), words(80)]).unwrap();
        let pairs = load_parallel_corpus(&src, &tgt, None, DEFAULT_MAX_LEN).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].source.len(), 3);
        assert_eq!(pairs[1].source.len(), 80);
    }

    #[test]
    fn line_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("s");
        let tgt = dir.path().join("t");
        write_lines(&src, &["a"; 5]).unwrap();
        write_lines(&tgt, &["b"; 4]).unwrap();
        match load_parallel_corpus(&src, &tgt, None, 80) {
            Err(Error::Alignment { left, right, .. }) => assert_eq!((left, right), (5, 4)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn features_attach_to_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("s");
        let tgt = dir.path().join("t");
        let feats = dir.path().join("f.bin");
        write_lines(&src, &["a b", "c"]).unwrap();
        write_lines(&tgt, &["x", "y z"]).unwrap();
        let rows: Vec<Vec<f32>> = (0..2).map(|r| (0..4096).map(|i| (r * 4096 + i) as f32).collect()).collect();
        write_features(&feats, &rows).unwrap();
        let pairs = load_parallel_corpus(&src, &tgt, Some(&feats), 80).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[1].image.as_ref().unwrap().len(), 4096);
        assert_eq!(pairs[1].image.as_ref().unwrap()[0], 4096.0);

        write_features(&feats, &rows[..1]).unwrap();
        assert!(matches!(
            load_parallel_corpus(&src, &tgt, Some(&feats), 80),
            Err(Error::Alignment { .. })
        ));
    }

    proptest! {
        #[test]
        fn filtering_is_symmetric(lens in proptest::collection::vec((1usize..12, 1usize..12), 0..20)) {
            let max_len = 6;
            let src: Vec<Vec<String>> = lens.iter().map(|&(a, _)| vec!["s".to_string(); a]).collect();
            let tgt: Vec<Vec<String>> = lens.iter().map(|&(_, b)| vec!["t".to_string(); b]).collect();
            let kept = align_pairs(src.clone(), tgt.clone(), None, max_len).unwrap();
            let flipped = align_pairs(tgt, src, None, max_len).unwrap();
            let expect = lens.iter().filter(|&&(a, b)| a <= max_len && b <= max_len).count();
            prop_assert_eq!(kept.len(), expect);
            prop_assert_eq!(flipped.len(), expect);
        }
    }
}
