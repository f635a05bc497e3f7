use crate::numerics::{ParameterStore, Real};

/// One Adadelta step over every parameter, then zeroes the gradients:
///
/// ```text
/// E[g²]  ← ρ·E[g²] + (1−ρ)·g²
/// Δx     = −√(E[Δx²] + ε) / √(E[g²] + ε) · g
/// E[Δx²] ← ρ·E[Δx²] + (1−ρ)·Δx²
/// x      ← x + Δx
/// ```
pub fn adadelta_update<F: Real>(store: &mut ParameterStore<F>, rho: F, eps: F) {
    let one_minus = F::one() - rho;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let e = store.entry_mut(id);
        let values = e.value.as_mut_slice().iter_mut();
        let grads = e.grad.as_mut_slice().iter_mut();
        let eg2 = e.sq_grad_avg.as_mut_slice().iter_mut();
        let edx2 = e.sq_update_avg.as_mut_slice().iter_mut();
        for (((x, g), eg2), edx2) in values.zip(grads).zip(eg2).zip(edx2) {
            *eg2 = rho * *eg2 + one_minus * *g * *g;
            let dx = -((*edx2 + eps).sqrt() / (*eg2 + eps).sqrt()) * *g;
            *edx2 = rho * *edx2 + one_minus * dx * dx;
            *x += dx;
            *g = F::zero();
        }
    }
}

/// Rescales the gradients so their global L2 norm is at most `max_norm`.
/// A non-positive `max_norm` disables clipping. Returns the norm before
/// clipping.
pub fn clip_gradients<F: Real>(store: &mut ParameterStore<F>, max_norm: F) -> F {
    let norm = store.grad_norm();
    if max_norm > F::zero() && norm > max_norm {
        store.scale_grads(max_norm / norm);
    }
    norm
}
