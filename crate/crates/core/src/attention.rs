//! Additive attention: alignment energies, masked softmax weights and the
//! context vector.

use crate::error::{Error, Result};
use crate::numerics::{add_assign, dot, masked_softmax, masked_softmax_backward, DenseMatrix, ParamId, Real};

#[derive(Debug, Clone, Copy)]
pub struct AttentionIds {
    pub v_a: ParamId,
    pub u_a: ParamId,
    pub w_a: ParamId,
}

/// `v_a` is `[1 × d_a]`, `U_a` is `[d_s × d_a]`, `W_a` is `[2·d_h × d_a]`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams<'a, F> {
    pub v_a: &'a DenseMatrix<F>,
    pub u_a: &'a DenseMatrix<F>,
    pub w_a: &'a DenseMatrix<F>,
}

impl AttentionIds {
    pub fn params<'a, F>(&self, values: &'a [DenseMatrix<F>]) -> AttentionParams<'a, F> {
        AttentionParams {
            v_a: &values[self.v_a.0],
            u_a: &values[self.u_a.0],
            w_a: &values[self.w_a.0],
        }
    }
}

impl<F: Real> AttentionParams<'_, F> {
    fn check(&self, s_prev: &[F], annotations: &DenseMatrix<F>) -> Result<()> {
        let d_a = self.v_a.cols();
        if self.v_a.rows() != 1 || self.u_a.cols() != d_a || self.w_a.cols() != d_a {
            return Err(Error::shape("inconsistent alignment dimensionality"));
        }
        if s_prev.len() != self.u_a.rows() || annotations.cols() != self.w_a.rows() {
            return Err(Error::shape(format!(
                "attention over {}-dim annotations from a {}-dim state",
                annotations.cols(),
                s_prev.len()
            )));
        }
        Ok(())
    }
}

/// `W_aᵀh_i` for every annotation row, computed once per sentence.
pub(crate) fn project_keys<F: Real>(annotations: &DenseMatrix<F>, w_a: &DenseMatrix<F>) -> DenseMatrix<F> {
    let mut keys = DenseMatrix::zeros(annotations.rows(), w_a.cols());
    for i in 0..annotations.rows() {
        w_a.vecmat_acc(annotations.row(i), keys.row_mut(i));
    }
    keys
}

#[derive(Debug, Clone)]
pub(crate) struct AttentionCache<F> {
    /// `tanh(U_aᵀs + W_aᵀh_i)` per row.
    pub hidden: DenseMatrix<F>,
    pub alpha: Vec<F>,
    pub context: Vec<F>,
}

pub(crate) fn attend<F: Real>(
    s_prev: &[F],
    keys: &DenseMatrix<F>,
    annotations: &DenseMatrix<F>,
    mask: &[F],
    p: &AttentionParams<'_, F>,
) -> Result<AttentionCache<F>> {
    let query = p.u_a.vecmat(s_prev)?;
    let mut hidden = keys.clone();
    let mut energies = Vec::with_capacity(keys.rows());
    for i in 0..keys.rows() {
        let row = hidden.row_mut(i);
        for (h, &q) in row.iter_mut().zip(&query) {
            *h = (*h + q).tanh();
        }
        energies.push(dot(row, p.v_a.as_slice()));
    }
    let alpha = masked_softmax(&energies, mask)?;
    let context = weighted_sum(&alpha, annotations);
    Ok(AttentionCache {
        hidden,
        alpha,
        context,
    })
}

fn weighted_sum<F: Real>(alpha: &[F], annotations: &DenseMatrix<F>) -> Vec<F> {
    let mut c = vec![F::zero(); annotations.cols()];
    for (i, &a) in alpha.iter().enumerate() {
        if a == F::zero() {
            continue;
        }
        for (cv, &h) in c.iter_mut().zip(annotations.row(i)) {
            *cv += a * h;
        }
    }
    c
}

/// Backward through [`attend`]. Adds into `d_annotations` and `d_keys`
/// (the gradient of the projected keys, folded into `W_a` and the
/// annotations once per sentence) and returns the gradient of `s_prev`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attend_backward<F: Real>(
    cache: &AttentionCache<F>,
    s_prev: &[F],
    annotations: &DenseMatrix<F>,
    d_context: &[F],
    ids: &AttentionIds,
    values: &[DenseMatrix<F>],
    grads: &mut [DenseMatrix<F>],
    d_annotations: &mut DenseMatrix<F>,
    d_keys: &mut DenseMatrix<F>,
) -> Vec<F> {
    let n = annotations.rows();
    let mut d_alpha = vec![F::zero(); n];
    for i in 0..n {
        let a = cache.alpha[i];
        if a == F::zero() {
            continue;
        }
        d_alpha[i] = dot(d_context, annotations.row(i));
        for (g, &dc) in d_annotations.row_mut(i).iter_mut().zip(d_context) {
            *g += a * dc;
        }
    }
    let d_energy = masked_softmax_backward(&cache.alpha, &d_alpha);
    let v_a = values[ids.v_a.0].as_slice();
    let d_a = v_a.len();
    let mut d_query = vec![F::zero(); d_a];
    for i in 0..n {
        let de = d_energy[i];
        if de == F::zero() {
            continue;
        }
        let hidden = cache.hidden.row(i);
        let dv = grads[ids.v_a.0].as_mut_slice();
        for k in 0..d_a {
            dv[k] += de * hidden[k];
        }
        let dk = d_keys.row_mut(i);
        for k in 0..d_a {
            let g = de * v_a[k] * (F::one() - hidden[k] * hidden[k]);
            dk[k] += g;
            d_query[k] += g;
        }
    }
    grads[ids.u_a.0].add_outer(s_prev, &d_query);
    let mut ds = vec![F::zero(); s_prev.len()];
    values[ids.u_a.0].matvec_acc(&d_query, &mut ds);
    ds
}

/// Folds accumulated key gradients into `W_a` and the annotations.
pub(crate) fn keys_backward<F: Real>(
    annotations: &DenseMatrix<F>,
    d_keys: &DenseMatrix<F>,
    ids: &AttentionIds,
    values: &[DenseMatrix<F>],
    grads: &mut [DenseMatrix<F>],
    d_annotations: &mut DenseMatrix<F>,
) {
    let w_a = &values[ids.w_a.0];
    for i in 0..annotations.rows() {
        let dk = d_keys.row(i);
        grads[ids.w_a.0].add_outer(annotations.row(i), dk);
        let mut tmp = vec![F::zero(); annotations.cols()];
        w_a.matvec_acc(dk, &mut tmp);
        add_assign(d_annotations.row_mut(i), &tmp);
    }
}

/// `e_i = v_aᵀ tanh(U_aᵀs_{t−1} + W_aᵀh_i)` for every annotation row.
pub fn alignment_energies<F: Real>(
    s_prev: &[F],
    annotations: &DenseMatrix<F>,
    p: &AttentionParams<'_, F>,
) -> Result<Vec<F>> {
    p.check(s_prev, annotations)?;
    let query = p.u_a.vecmat(s_prev)?;
    let keys = project_keys(annotations, p.w_a);
    Ok((0..keys.rows())
        .map(|i| {
            keys.row(i)
                .iter()
                .zip(&query)
                .zip(p.v_a.as_slice())
                .map(|((&k, &q), &v)| v * (k + q).tanh())
                .sum()
        })
        .collect())
}

/// Softmax over unmasked energies; masked positions get exactly zero.
pub fn attention_weights<F: Real>(e: &[F], mask: &[F]) -> Result<Vec<F>> {
    masked_softmax(e, mask)
}

/// `c_t = Σ_i α_i h_i`.
pub fn context_vector<F: Real>(alpha: &[F], annotations: &DenseMatrix<F>) -> Result<Vec<F>> {
    if alpha.len() != annotations.rows() {
        return Err(Error::shape(format!(
            "{} weights for {} annotations",
            alpha.len(),
            annotations.rows()
        )));
    }
    Ok(weighted_sum(alpha, annotations))
}
