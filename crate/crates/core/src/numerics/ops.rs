use super::Real;
use crate::error::{Error, Result};

#[inline]
pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[inline]
pub fn tanh<F: Real>(x: F) -> F {
    x.tanh()
}

#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(F::zero(), |s, (&x, &y)| s + x * y)
}

#[inline]
pub fn add_assign<F: Real>(dst: &mut [F], src: &[F]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Softmax with the maximum subtracted before exponentiation.
pub fn softmax<F: Real>(x: &[F]) -> Vec<F> {
    let max = x.iter().copied().fold(F::neg_infinity(), F::max);
    let mut out: Vec<F> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: F = out.iter().copied().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

pub fn log_softmax<F: Real>(x: &[F]) -> Vec<F> {
    let max = x.iter().copied().fold(F::neg_infinity(), F::max);
    let lse = x.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
    x.iter().map(|&v| v - lse).collect()
}

/// Softmax restricted to positions where `mask` is nonzero. Masked
/// positions get exactly zero and are left out of the normaliser.
pub fn masked_softmax<F: Real>(e: &[F], mask: &[F]) -> Result<Vec<F>> {
    if e.len() != mask.len() {
        return Err(Error::shape(format!(
            "{} energies with a mask of length {}",
            e.len(),
            mask.len()
        )));
    }
    let max = e
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m != F::zero())
        .map(|(&v, _)| v)
        .fold(F::neg_infinity(), F::max);
    if max == F::neg_infinity() {
        return Err(Error::InvalidInput(
            "attention over a fully masked sequence".into(),
        ));
    }
    let mut out: Vec<F> = e
        .iter()
        .zip(mask)
        .map(|(&v, &m)| {
            if m != F::zero() {
                (v - max).exp()
            } else {
                F::zero()
            }
        })
        .collect();
    let sum: F = out.iter().copied().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    Ok(out)
}

/// Gradient of the energies given the softmax output `alpha` and the
/// gradient `d_alpha` of the loss with respect to it.
pub fn masked_softmax_backward<F: Real>(alpha: &[F], d_alpha: &[F]) -> Vec<F> {
    let inner = dot(alpha, d_alpha);
    alpha
        .iter()
        .zip(d_alpha)
        .map(|(&a, &g)| a * (g - inner))
        .collect()
}
