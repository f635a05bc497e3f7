use super::corpus::Example;
use super::vocab::PAD;
use crate::numerics::Rng;

/// Padded minibatch. Masks hold 1 on real tokens and 0 on padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub source_ids: Vec<Vec<usize>>,
    pub source_mask: Vec<Vec<u8>>,
    pub target_ids: Vec<Vec<usize>>,
    pub target_mask: Vec<Vec<u8>>,
    pub images: Option<Vec<Vec<f32>>>,
    /// Position of each row's example in the input sequence.
    pub indices: Vec<usize>,
}

fn pad(seqs: &[&[usize]]) -> (Vec<Vec<usize>>, Vec<Vec<u8>>) {
    let width = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
    seqs.iter()
        .map(|s| {
            let mut ids = s.to_vec();
            ids.resize(width, PAD);
            let mut mask = vec![1u8; s.len()];
            mask.resize(width, 0);
            (ids, mask)
        })
        .unzip()
}

impl Batch {
    pub fn from_examples(examples: &[Example], indices: &[usize]) -> Batch {
        let rows: Vec<&Example> = indices.iter().map(|&i| &examples[i]).collect();
        let src: Vec<&[usize]> = rows.iter().map(|e| e.source_ids.as_slice()).collect();
        let tgt: Vec<&[usize]> = rows.iter().map(|e| e.target_ids.as_slice()).collect();
        let (source_ids, source_mask) = pad(&src);
        let (target_ids, target_mask) = pad(&tgt);
        let images = if rows.iter().all(|e| e.image.is_some()) && !rows.is_empty() {
            Some(rows.iter().map(|e| e.image.clone().expect("checked")).collect())
        } else {
            None
        };
        Batch {
            source_ids,
            source_mask,
            target_ids,
            target_mask,
            images,
            indices: indices.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.source_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_ids.is_empty()
    }

    /// Real (unpadded) token ids of row `b`.
    pub fn row(&self, b: usize) -> (&[usize], &[usize]) {
        let n = self.source_mask[b].iter().filter(|&&m| m != 0).count();
        let m = self.target_mask[b].iter().filter(|&&m| m != 0).count();
        (&self.source_ids[b][..n], &self.target_ids[b][..m])
    }

    pub fn image(&self, b: usize) -> Option<&[f32]> {
        self.images.as_ref().map(|im| im[b].as_slice())
    }

    pub fn source_tokens(&self) -> usize {
        self.source_mask.iter().flatten().map(|&m| m as usize).sum()
    }

    pub fn target_tokens(&self) -> usize {
        self.target_mask.iter().flatten().map(|&m| m as usize).sum()
    }
}

/// Shuffles and chunks `examples` into batches of `batch_size`. With
/// `sort_by_length`, the shuffled examples are stably sorted by length
/// before chunking and the batch order is shuffled afterwards, which keeps
/// padding low.
pub fn make_batches(
    examples: &[Example],
    batch_size: usize,
    rng: &mut Rng,
    sort_by_length: bool,
) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut order: Vec<usize> = (0..examples.len()).collect();
    rng.shuffle(&mut order);
    if sort_by_length {
        order.sort_by_key(|&i| (examples[i].source_ids.len(), examples[i].target_ids.len()));
    }
    let mut batches: Vec<Batch> = order
        .chunks(batch_size)
        .map(|idx| Batch::from_examples(examples, idx))
        .collect();
    if sort_by_length {
        rng.shuffle(&mut batches);
    }
    batches
}
