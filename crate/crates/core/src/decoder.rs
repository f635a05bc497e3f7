//! Decoder initial state, conditional GRU step, readout, and greedy/beam
//! search.

use std::cmp::Ordering;

use crate::data::{BOS, EOS};
use crate::error::{Error, Result};
use crate::model::{Model, ReadoutIds};
use crate::network::{self, SourceForward};
use crate::numerics::{log_softmax, DenseMatrix, Real};
use crate::training::DropoutMasks;

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState<F> {
    pub s: Vec<F>,
    pub t: usize,
}

/// `s_0 = tanh(W_diᵀ[←h_1 ; →h_N] + b_di)`, plus `W_mᵀd` when an image
/// vector is given.
pub fn init_decoder_state<F: Real>(
    h_bwd_first: &[F],
    h_fwd_last: &[F],
    d: Option<&[F]>,
    w_di: &DenseMatrix<F>,
    b_di: &DenseMatrix<F>,
    w_m: Option<&DenseMatrix<F>>,
) -> Result<DecoderState<F>> {
    let d_s = w_di.cols();
    if w_di.rows() != h_bwd_first.len() + h_fwd_last.len() || b_di.shape() != (1, d_s) {
        return Err(Error::shape(format!(
            "decoder initialiser {}x{} for boundary states of size {} + {}",
            w_di.rows(),
            d_s,
            h_bwd_first.len(),
            h_fwd_last.len()
        )));
    }
    let mut pre = b_di.as_slice().to_vec();
    let mut boundary = h_bwd_first.to_vec();
    boundary.extend_from_slice(h_fwd_last);
    w_di.vecmat_acc(&boundary, &mut pre);
    match (d, w_m) {
        (Some(d), Some(w_m)) => {
            if w_m.shape() != (d.len(), d_s) {
                return Err(Error::shape("W_m does not map the image vector to the decoder state"));
            }
            w_m.vecmat_acc(d, &mut pre);
        }
        (None, None) => {}
        _ => {
            return Err(Error::InvalidInput(
                "image vector and W_m must be given together".into(),
            ))
        }
    }
    pre.iter_mut().for_each(|v| *v = v.tanh());
    Ok(DecoderState { s: pre, t: 0 })
}

/// Advances the decoder by one token. Returns the new state, the context
/// vector `c_t` and the attention weights `α_t`, all computed from
/// `s_{t−1}`.
pub fn decoder_step<F: Real>(
    model: &Model<F>,
    source: &SourceForward<F>,
    state: &DecoderState<F>,
    y_prev: usize,
) -> Result<(DecoderState<F>, Vec<F>, Vec<F>)> {
    let step = network::decoder_step(model, source, &state.s, y_prev, &DropoutMasks::none())?;
    Ok((
        DecoderState {
            s: step.state().to_vec(),
            t: state.t + 1,
        },
        step.context().to_vec(),
        step.alpha().to_vec(),
    ))
}

/// Readout weights: `W_rs [d_s × d_r]`, `W_ry [d_y × d_r]`,
/// `W_rc [2·d_h × d_r]`, `b_r`, `W_o [d_r × |V_y|]`, `b_o`.
#[derive(Debug, Clone, Copy)]
pub struct ReadoutParams<'a, F> {
    pub w_rs: &'a DenseMatrix<F>,
    pub w_ry: &'a DenseMatrix<F>,
    pub w_rc: &'a DenseMatrix<F>,
    pub b_r: &'a DenseMatrix<F>,
    pub w_o: &'a DenseMatrix<F>,
    pub b_o: &'a DenseMatrix<F>,
}

impl ReadoutIds {
    pub fn params<'a, F>(&self, values: &'a [DenseMatrix<F>]) -> ReadoutParams<'a, F> {
        ReadoutParams {
            w_rs: &values[self.w_rs.0],
            w_ry: &values[self.w_ry.0],
            w_rc: &values[self.w_rc.0],
            b_r: &values[self.b_r.0],
            w_o: &values[self.w_o.0],
            b_o: &values[self.b_o.0],
        }
    }
}

/// Tanh layer and log-softmax output of the readout; the optional mask is
/// the pre-readout dropout applied to the tanh layer.
pub(crate) fn readout_forward<F: Real>(
    s: &[F],
    y_emb: &[F],
    c: &[F],
    p: &ReadoutParams<'_, F>,
    mask: Option<&[F]>,
) -> (Vec<F>, Vec<F>) {
    let mut hidden = p.b_r.as_slice().to_vec();
    p.w_rs.vecmat_acc(s, &mut hidden);
    p.w_ry.vecmat_acc(y_emb, &mut hidden);
    p.w_rc.vecmat_acc(c, &mut hidden);
    hidden.iter_mut().for_each(|v| *v = v.tanh());
    let mut logits = p.b_o.as_slice().to_vec();
    match mask {
        Some(m) => {
            let out: Vec<F> = hidden.iter().zip(m).map(|(&h, &mv)| h * mv).collect();
            p.w_o.vecmat_acc(&out, &mut logits);
        }
        None => p.w_o.vecmat_acc(&hidden, &mut logits),
    }
    let lp = log_softmax(&logits);
    (hidden, lp)
}

/// `log softmax(W_oᵀ tanh(W_rsᵀs + W_ryᵀy + W_rcᵀc + b_r) + b_o)`.
pub fn readout<F: Real>(s_t: &[F], y_prev_embed: &[F], c_t: &[F], p: &ReadoutParams<'_, F>) -> Result<Vec<F>> {
    let d_r = p.b_r.cols();
    let ok = p.w_rs.shape() == (s_t.len(), d_r)
        && p.w_ry.shape() == (y_prev_embed.len(), d_r)
        && p.w_rc.shape() == (c_t.len(), d_r)
        && p.w_o.rows() == d_r
        && p.b_o.shape() == (1, p.w_o.cols());
    if !ok {
        return Err(Error::shape("readout parameters do not match the inputs"));
    }
    Ok(readout_forward(s_t, y_prev_embed, c_t, p, None).1)
}

/// Partial translation tracked by the decoders.
#[derive(Debug, Clone)]
pub struct Hypothesis<F> {
    /// Emitted tokens, starting with `BOS`.
    pub tokens: Vec<usize>,
    /// Accumulated natural-log probability.
    pub logprob: F,
    pub state: DecoderState<F>,
    pub finished: bool,
    /// Attention weights for each emitted token.
    pub alphas: Vec<Vec<F>>,
}

impl<F: Real> Hypothesis<F> {
    fn start(s0: Vec<F>) -> Self {
        Self {
            tokens: vec![BOS],
            logprob: F::zero(),
            state: DecoderState { s: s0, t: 0 },
            finished: false,
            alphas: Vec::new(),
        }
    }

    /// Number of emitted tokens, `EOS` included.
    pub fn generated(&self) -> usize {
        self.tokens.len() - 1
    }

    /// Length-normalised score `logprob / generated()`.
    pub fn score(&self) -> F {
        self.logprob / F::lit(self.generated().max(1) as f64)
    }

    /// Output tokens with `BOS` and `EOS` stripped.
    pub fn output(&self) -> Vec<usize> {
        self.tokens[1..]
            .iter()
            .copied()
            .filter(|&t| t != EOS)
            .collect()
    }
}

pub fn default_max_steps(source_len: usize) -> usize {
    3 * source_len + 10
}

/// Candidate ranking: higher log-probability first, then lower token id,
/// then lower hypothesis index.
fn rank<F: Real>(a: &(F, usize, usize), b: &(F, usize, usize)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
        .then(a.2.cmp(&b.2))
}

/// Beam search over accumulated log-probabilities.
///
/// The live beam shrinks by one each time a hypothesis emits `EOS`; search
/// stops when nothing is live or after `max_steps` tokens. Finished and
/// still-live hypotheses then compete on [`Hypothesis::score`], ties going
/// to the lexicographically smaller token sequence and then the earlier
/// hypothesis.
pub fn beam_decode<F: Real>(
    model: &Model<F>,
    source_ids: &[usize],
    image: Option<&[f32]>,
    beam: usize,
    max_steps: usize,
) -> Result<Hypothesis<F>> {
    if beam == 0 {
        return Err(Error::InvalidInput("beam width must be at least 1".into()));
    }
    if max_steps == 0 {
        return Err(Error::InvalidInput("max_steps must be at least 1".into()));
    }
    let none = DropoutMasks::none();
    let src = network::encode_source(model, source_ids, image, &none)?;
    let mut live = vec![Hypothesis::start(src.initial_state().to_vec())];
    let mut finished: Vec<Hypothesis<F>> = Vec::new();

    for _ in 0..max_steps {
        let width = beam - finished.len();
        if live.is_empty() || width == 0 {
            break;
        }
        let mut steps = Vec::with_capacity(live.len());
        let mut candidates = Vec::new();
        for (hi, h) in live.iter().enumerate() {
            let y_prev = *h.tokens.last().expect("starts with BOS");
            let step = network::decoder_step(model, &src, &h.state.s, y_prev, &none)?;
            for (tok, &lp) in step.log_probs().iter().enumerate() {
                candidates.push((h.logprob + lp, tok, hi));
            }
            steps.push(step);
        }
        candidates.sort_by(rank);
        candidates.truncate(width);
        let mut next = Vec::with_capacity(candidates.len());
        for (lp, tok, hi) in candidates {
            let parent = &live[hi];
            let step = &steps[hi];
            let mut tokens = parent.tokens.clone();
            tokens.push(tok);
            let mut alphas = parent.alphas.clone();
            alphas.push(step.alpha().to_vec());
            let h = Hypothesis {
                tokens,
                logprob: lp,
                state: DecoderState {
                    s: step.state().to_vec(),
                    t: parent.state.t + 1,
                },
                finished: tok == EOS,
                alphas,
            };
            if h.finished {
                finished.push(h);
            } else {
                next.push(h);
            }
        }
        live = next;
    }
    finished.extend(live);
    let best = finished
        .into_iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| {
            b.score()
                .partial_cmp(&a.score())
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.tokens.cmp(&b.tokens))
                .then(i.cmp(j))
        })
        .map(|(_, h)| h)
        .expect("at least one hypothesis");
    Ok(best)
}

/// Greedy decoding: at each step the token maximising the accumulated
/// log-probability (lowest id on ties) is fed back, until `EOS` or
/// `max_steps` tokens.
pub fn greedy_hypothesis<F: Real>(
    model: &Model<F>,
    source_ids: &[usize],
    image: Option<&[f32]>,
    max_steps: usize,
) -> Result<Hypothesis<F>> {
    if max_steps == 0 {
        return Err(Error::InvalidInput("max_steps must be at least 1".into()));
    }
    let none = DropoutMasks::none();
    let src = network::encode_source(model, source_ids, image, &none)?;
    let mut h = Hypothesis::start(src.initial_state().to_vec());
    for _ in 0..max_steps {
        let y_prev = *h.tokens.last().expect("starts with BOS");
        let step = network::decoder_step(model, &src, &h.state.s, y_prev, &none)?;
        let (tok, lp) = step
            .log_probs()
            .iter()
            .map(|&lp| h.logprob + lp)
            .enumerate()
            .fold((0, F::neg_infinity()), |best, (i, v)| if v > best.1 { (i, v) } else { best });
        h.tokens.push(tok);
        h.logprob = lp;
        h.state = DecoderState {
            s: step.state().to_vec(),
            t: h.state.t + 1,
        };
        h.alphas.push(step.alpha().to_vec());
        if tok == EOS {
            h.finished = true;
            break;
        }
    }
    Ok(h)
}

/// Greedy translation with `BOS`/`EOS` stripped. `max_steps` defaults to
/// `3·N + 10`.
pub fn greedy_decode<F: Real>(
    model: &Model<F>,
    source_ids: &[usize],
    image: Option<&[f32]>,
    max_steps: Option<usize>,
) -> Result<Vec<usize>> {
    let max_steps = max_steps.unwrap_or_else(|| default_max_steps(source_ids.len()));
    Ok(greedy_hypothesis(model, source_ids, image, max_steps)?.output())
}

/// Beam (or, for `beam == 1`, greedy) translation with `BOS`/`EOS`
/// stripped.
pub fn translate<F: Real>(
    model: &Model<F>,
    source_ids: &[usize],
    image: Option<&[f32]>,
    beam: usize,
) -> Result<Vec<usize>> {
    let max_steps = default_max_steps(source_ids.len());
    if beam <= 1 {
        greedy_decode(model, source_ids, image, Some(max_steps))
    } else {
        Ok(beam_decode(model, source_ids, image, beam, max_steps)?.output())
    }
}
