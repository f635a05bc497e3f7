//! Bidirectional GRU encoder and the source-side image injection points.

use crate::error::{Error, Result};
use crate::model::Mode;
use crate::numerics::{add_assign, sigmoid, DenseMatrix, ParamId, Real};

/// Ids of one GRU's parameters. Input matrices are `[d_in × d_h]`,
/// recurrent matrices `[d_h × d_h]`, biases `[1 × d_h]`.
#[derive(Debug, Clone, Copy)]
pub struct GruIds {
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct GruParams<'a, F> {
    pub w_z: &'a DenseMatrix<F>,
    pub w_r: &'a DenseMatrix<F>,
    pub w_h: &'a DenseMatrix<F>,
    pub u_z: &'a DenseMatrix<F>,
    pub u_r: &'a DenseMatrix<F>,
    pub u_h: &'a DenseMatrix<F>,
    pub b_z: &'a DenseMatrix<F>,
    pub b_r: &'a DenseMatrix<F>,
    pub b_h: &'a DenseMatrix<F>,
}

impl GruIds {
    pub fn params<'a, F>(&self, values: &'a [DenseMatrix<F>]) -> GruParams<'a, F> {
        GruParams {
            w_z: &values[self.w_z.0],
            w_r: &values[self.w_r.0],
            w_h: &values[self.w_h.0],
            u_z: &values[self.u_z.0],
            u_r: &values[self.u_r.0],
            u_h: &values[self.u_h.0],
            b_z: &values[self.b_z.0],
            b_r: &values[self.b_r.0],
            b_h: &values[self.b_h.0],
        }
    }
}

impl<F: Real> GruParams<'_, F> {
    pub fn input_dim(&self) -> usize {
        self.w_z.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.u_z.rows()
    }

    fn check(&self, x: &[F], h: &[F]) -> Result<()> {
        let (d_in, d_h) = (self.input_dim(), self.hidden_dim());
        let ok = [self.w_z, self.w_r, self.w_h]
            .iter()
            .all(|m| m.shape() == (d_in, d_h))
            && [self.u_z, self.u_r, self.u_h]
                .iter()
                .all(|m| m.shape() == (d_h, d_h))
            && [self.b_z, self.b_r, self.b_h]
                .iter()
                .all(|m| m.shape() == (1, d_h));
        if !ok {
            return Err(Error::shape("inconsistent GRU parameter shapes"));
        }
        if x.len() != d_in || h.len() != d_h {
            return Err(Error::shape(format!(
                "GRU step with input {} / state {}, expected {d_in} / {d_h}",
                x.len(),
                h.len()
            )));
        }
        Ok(())
    }
}

/// Everything the backward pass needs from one GRU step.
#[derive(Debug, Clone)]
pub(crate) struct GruCache<F> {
    /// Input after dropout.
    pub x: Vec<F>,
    pub h_prev: Vec<F>,
    /// Previous state after recurrent dropout.
    pub h_rec: Vec<F>,
    pub z: Vec<F>,
    pub r: Vec<F>,
    pub cand: Vec<F>,
    pub h: Vec<F>,
}

fn masked<F: Real>(v: &[F], mask: Option<&[F]>) -> Vec<F> {
    match mask {
        Some(m) => v.iter().zip(m).map(|(&a, &b)| a * b).collect(),
        None => v.to_vec(),
    }
}

/// One GRU step with optional input and recurrent dropout masks:
///
/// ```text
/// z  = σ(Wzᵀx + Uzᵀh + bz)
/// r  = σ(Wrᵀx + Urᵀh + br)
/// h̃  = tanh(Whᵀx + Uhᵀ(r ⊙ h) + bh)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
pub(crate) fn gru_forward<F: Real>(
    x: &[F],
    h_prev: &[F],
    p: &GruParams<'_, F>,
    in_mask: Option<&[F]>,
    rec_mask: Option<&[F]>,
) -> GruCache<F> {
    let x = masked(x, in_mask);
    let h_rec = masked(h_prev, rec_mask);

    let mut z = p.b_z.as_slice().to_vec();
    p.w_z.vecmat_acc(&x, &mut z);
    p.u_z.vecmat_acc(&h_rec, &mut z);
    z.iter_mut().for_each(|v| *v = sigmoid(*v));

    let mut r = p.b_r.as_slice().to_vec();
    p.w_r.vecmat_acc(&x, &mut r);
    p.u_r.vecmat_acc(&h_rec, &mut r);
    r.iter_mut().for_each(|v| *v = sigmoid(*v));

    let gated: Vec<F> = r.iter().zip(&h_rec).map(|(&a, &b)| a * b).collect();
    let mut cand = p.b_h.as_slice().to_vec();
    p.w_h.vecmat_acc(&x, &mut cand);
    p.u_h.vecmat_acc(&gated, &mut cand);
    cand.iter_mut().for_each(|v| *v = v.tanh());

    let h = h_prev
        .iter()
        .zip(&z)
        .zip(&cand)
        .map(|((&hp, &zv), &c)| (F::one() - zv) * hp + zv * c)
        .collect();
    GruCache {
        x,
        h_prev: h_prev.to_vec(),
        h_rec,
        z,
        r,
        cand,
        h,
    }
}

/// Backward through [`gru_forward`]. Accumulates weight gradients and
/// returns `(d_input, d_h_prev)` with respect to the unmasked inputs.
pub(crate) fn gru_backward<F: Real>(
    cache: &GruCache<F>,
    dh: &[F],
    ids: &GruIds,
    values: &[DenseMatrix<F>],
    grads: &mut [DenseMatrix<F>],
    in_mask: Option<&[F]>,
    rec_mask: Option<&[F]>,
) -> (Vec<F>, Vec<F>) {
    let p = ids.params(values);
    let d_h = dh.len();
    let mut dx = vec![F::zero(); cache.x.len()];
    let mut dh_rec = vec![F::zero(); d_h];
    let mut dh_prev: Vec<F> = dh.iter().zip(&cache.z).map(|(&g, &z)| g * (F::one() - z)).collect();

    // candidate branch
    let da_h: Vec<F> = (0..d_h)
        .map(|i| dh[i] * cache.z[i] * (F::one() - cache.cand[i] * cache.cand[i]))
        .collect();
    let gated: Vec<F> = cache.r.iter().zip(&cache.h_rec).map(|(&a, &b)| a * b).collect();
    grads[ids.w_h.0].add_outer(&cache.x, &da_h);
    grads[ids.u_h.0].add_outer(&gated, &da_h);
    add_assign(grads[ids.b_h.0].as_mut_slice(), &da_h);
    p.w_h.matvec_acc(&da_h, &mut dx);
    let mut d_gated = vec![F::zero(); d_h];
    p.u_h.matvec_acc(&da_h, &mut d_gated);

    // update gate
    let da_z: Vec<F> = (0..d_h)
        .map(|i| {
            let z = cache.z[i];
            dh[i] * (cache.cand[i] - cache.h_prev[i]) * z * (F::one() - z)
        })
        .collect();
    // reset gate
    let da_r: Vec<F> = (0..d_h)
        .map(|i| {
            let r = cache.r[i];
            d_gated[i] * cache.h_rec[i] * r * (F::one() - r)
        })
        .collect();
    for i in 0..d_h {
        dh_rec[i] += d_gated[i] * cache.r[i];
    }
    for (w, u, b, da) in [(ids.w_z, ids.u_z, ids.b_z, &da_z), (ids.w_r, ids.u_r, ids.b_r, &da_r)] {
        grads[w.0].add_outer(&cache.x, da);
        grads[u.0].add_outer(&cache.h_rec, da);
        add_assign(grads[b.0].as_mut_slice(), da);
        values[w.0].matvec_acc(da, &mut dx);
        values[u.0].matvec_acc(da, &mut dh_rec);
    }

    match rec_mask {
        Some(m) => dh_prev
            .iter_mut()
            .zip(dh_rec.iter().zip(m))
            .for_each(|(d, (&g, &mv))| *d += g * mv),
        None => add_assign(&mut dh_prev, &dh_rec),
    }
    if let Some(m) = in_mask {
        dx.iter_mut().zip(m).for_each(|(d, &mv)| *d *= mv);
    }
    (dx, dh_prev)
}

/// Single GRU step without dropout.
pub fn gru_step<F: Real>(x: &[F], h_prev: &[F], p: &GruParams<'_, F>) -> Result<Vec<F>> {
    p.check(x, h_prev)?;
    Ok(gru_forward(x, h_prev, p, None, None).h)
}

/// Result of the bidirectional pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput<F> {
    /// Row `i` is `[→h_i ; ←h_i]`; `[N' × 2·d_h]`.
    pub annotations: DenseMatrix<F>,
    /// Forward state at the last real position.
    pub h_fwd_last: Vec<F>,
    /// Backward state at the first position.
    pub h_bwd_first: Vec<F>,
    /// Number of real (unmasked) positions, image words included.
    pub effective_length: usize,
}

/// Dropout masks for one encoder direction.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct DirectionMasks<'a, F> {
    pub input: Option<&'a [F]>,
    pub recurrent: Option<&'a [F]>,
}

/// Runs one direction over `rows`. Positions with mask 0 copy the previous
/// state through unchanged and record no cache.
#[allow(clippy::type_complexity)]
pub(crate) fn run_direction<F: Real>(
    rows: &DenseMatrix<F>,
    mask: &[F],
    init: &[F],
    p: &GruParams<'_, F>,
    masks: DirectionMasks<'_, F>,
    reverse: bool,
) -> (Vec<Vec<F>>, Vec<Option<GruCache<F>>>) {
    let n = rows.rows();
    let mut states = vec![Vec::new(); n];
    let mut caches = vec![None; n];
    let mut h = init.to_vec();
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..n).rev())
    } else {
        Box::new(0..n)
    };
    for i in order {
        if mask[i] != F::zero() {
            let c = gru_forward(rows.row(i), &h, p, masks.input, masks.recurrent);
            h = c.h.clone();
            caches[i] = Some(c);
        }
        states[i] = h.clone();
    }
    (states, caches)
}

pub(crate) fn concat_annotations<F: Real>(fwd: &[Vec<F>], bwd: &[Vec<F>]) -> DenseMatrix<F> {
    let d_h = fwd.first().map_or(0, Vec::len);
    let mut ann = DenseMatrix::zeros(fwd.len(), 2 * d_h);
    for i in 0..fwd.len() {
        let row = ann.row_mut(i);
        row[..d_h].copy_from_slice(&fwd[i]);
        row[d_h..].copy_from_slice(&bwd[i]);
    }
    ann
}

/// Bidirectional GRU pass over (possibly padded) embedded rows.
///
/// The forward RNN starts from `init_fwd` at the first position, the
/// backward RNN from `init_bwd` at the last. Masked positions copy the
/// previous state through, so trailing padding leaves real positions
/// untouched.
pub fn encode_bidirectional<F: Real>(
    embedded: &DenseMatrix<F>,
    mask: &[F],
    init_fwd: &[F],
    init_bwd: &[F],
    fwd: &GruParams<'_, F>,
    bwd: &GruParams<'_, F>,
) -> Result<EncoderOutput<F>> {
    let n = embedded.rows();
    if n == 0 {
        return Err(Error::InvalidInput("empty source sequence".into()));
    }
    if mask.len() != n {
        return Err(Error::shape(format!("mask of length {} for {n} rows", mask.len())));
    }
    let effective_length = mask.iter().filter(|&&m| m != F::zero()).count();
    if effective_length == 0 {
        return Err(Error::InvalidInput("source sequence is fully masked".into()));
    }
    fwd.check(embedded.row(0), init_fwd)?;
    bwd.check(embedded.row(0), init_bwd)?;
    let (fs, _) = run_direction(embedded, mask, init_fwd, fwd, DirectionMasks::default(), false);
    let (bs, _) = run_direction(embedded, mask, init_bwd, bwd, DirectionMasks::default(), true);
    Ok(EncoderOutput {
        annotations: concat_annotations(&fs, &bs),
        h_fwd_last: fs[n - 1].clone(),
        h_bwd_first: bs[0].clone(),
        effective_length,
    })
}

/// `d = W_I²ᵀ(W_I¹ᵀq + b_I¹) + b_I²`: two affine maps with nothing in
/// between.
pub fn project_image<F: Real>(
    q: &[F],
    w1: &DenseMatrix<F>,
    b1: &DenseMatrix<F>,
    w2: &DenseMatrix<F>,
    b2: &DenseMatrix<F>,
) -> Result<Vec<F>> {
    if q.len() != w1.rows() {
        return Err(Error::shape(format!(
            "image vector of length {}, expected {}",
            q.len(),
            w1.rows()
        )));
    }
    if b1.shape() != (1, w1.cols()) || w2.rows() != w1.cols() || b2.shape() != (1, w2.cols()) {
        return Err(Error::shape("inconsistent image projection shapes"));
    }
    let mut hidden = b1.as_slice().to_vec();
    w1.vecmat_acc(q, &mut hidden);
    let mut d = b2.as_slice().to_vec();
    w2.vecmat_acc(&hidden, &mut d);
    Ok(d)
}

/// Inserts the projected image `d` as the first (IMG_1W) or first and last
/// (IMG_2W) source word. Other modes return the rows unchanged.
pub fn insert_image_words<F: Real>(
    embedded: &DenseMatrix<F>,
    d: &[F],
    mode: Mode,
) -> Result<DenseMatrix<F>> {
    let mask = vec![F::one(); embedded.rows()];
    Ok(insert_image_words_masked(embedded, &mask, d, mode)?.0)
}

/// Like [`insert_image_words`] for padded rows: the trailing image word
/// goes right after the last real token, and the returned mask marks the
/// inserted positions as real.
pub fn insert_image_words_masked<F: Real>(
    embedded: &DenseMatrix<F>,
    mask: &[F],
    d: &[F],
    mode: Mode,
) -> Result<(DenseMatrix<F>, Vec<F>)> {
    let k = mode.image_words();
    if k > 0 && d.len() != embedded.cols() {
        return Err(Error::shape(format!(
            "image word of size {} among {}-dimensional embeddings",
            d.len(),
            embedded.cols()
        )));
    }
    if mask.len() != embedded.rows() {
        return Err(Error::shape("mask length differs from row count"));
    }
    let n_real = mask.iter().filter(|&&m| m != F::zero()).count();
    let cols = embedded.cols();
    let mut data = Vec::with_capacity((embedded.rows() + k) * cols);
    let mut out_mask = Vec::with_capacity(embedded.rows() + k);
    if k >= 1 {
        data.extend_from_slice(d);
        out_mask.push(F::one());
    }
    data.extend_from_slice(&embedded.as_slice()[..n_real * cols]);
    out_mask.extend_from_slice(&mask[..n_real]);
    if k == 2 {
        data.extend_from_slice(d);
        out_mask.push(F::one());
    }
    data.extend_from_slice(&embedded.as_slice()[n_real * cols..]);
    out_mask.extend_from_slice(&mask[n_real..]);
    Ok((DenseMatrix::from_vec(embedded.rows() + k, cols, data)?, out_mask))
}

/// Initial encoder states from the projected image:
/// `←h_init = tanh(W_fᵀd + b_f)`, `→h_init = tanh(W_bᵀd + b_b)`.
/// Returns `(init_fwd, init_bwd)`.
pub fn image_encoder_init<F: Real>(
    d: &[F],
    w_f: &DenseMatrix<F>,
    b_f: &DenseMatrix<F>,
    w_b: &DenseMatrix<F>,
    b_b: &DenseMatrix<F>,
) -> Result<(Vec<F>, Vec<F>)> {
    for (w, b) in [(w_f, b_f), (w_b, b_b)] {
        if w.rows() != d.len() || b.shape() != (1, w.cols()) {
            return Err(Error::shape(format!(
                "encoder initialiser {}x{} against image vector of length {}",
                w.rows(),
                w.cols(),
                d.len()
            )));
        }
    }
    let affine_tanh = |w: &DenseMatrix<F>, b: &DenseMatrix<F>| -> Vec<F> {
        let mut out = b.as_slice().to_vec();
        w.vecmat_acc(d, &mut out);
        out.iter_mut().for_each(|v| *v = v.tanh());
        out
    };
    let init_bwd = affine_tanh(w_f, b_f);
    let init_fwd = affine_tanh(w_b, b_b);
    Ok((init_fwd, init_bwd))
}
