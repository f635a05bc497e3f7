use super::{DenseMatrix, ParameterStore};
use crate::error::{Error, Result};

/// Central-difference comparison for a single parameter.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Flat index of the worst scalar.
    pub worst_index: usize,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }

    /// Names of parameters whose worst relative error reaches `tol`.
    pub fn failing(&self, tol: f64) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| !(e.max_rel_error < tol))
            .map(|e| e.name.as_str())
            .collect()
    }
}

/// Compares the analytic gradient of `loss` against central differences
/// for every scalar of every parameter.
///
/// The numeric derivative uses the five-point stencil
/// `(−f(x+2ε) + 8f(x+ε) − 8f(x−ε) + f(x−2ε)) / 12ε`, whose truncation error
/// is `O(ε⁴)`. That allows `ε` around `1e-3`, where rounding noise in the
/// loss stays near `1e-13` and tiny gradient entries can still be checked
/// in relative terms.
///
/// `loss` must be deterministic and must accumulate its gradient into the
/// store's gradient buffers; the checker zeroes them before each call. The
/// relative error of a scalar is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn finite_diff_check<L>(
    mut loss: L,
    store: &mut ParameterStore<f64>,
    epsilon: f64,
) -> Result<GradCheckReport>
where
    L: FnMut(&mut ParameterStore<f64>) -> Result<f64>,
{
    store.zero_grads();
    let base = loss(store)?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!("loss is {base} at the base point")));
    }
    let analytic: Vec<DenseMatrix<f64>> = store.grads().to_vec();

    let mut report = GradCheckReport::default();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_owned();
        let mut entry = GradCheckEntry {
            name: name.clone(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_index: 0,
        };
        for k in 0..store.value(id).len() {
            let original = store.value(id).as_slice()[k];
            let mut eval = |store: &mut ParameterStore<f64>, x: f64| -> Result<f64> {
                store.value_mut(id).as_mut_slice()[k] = x;
                store.zero_grads();
                let v = loss(store)?;
                if !v.is_finite() {
                    return Err(Error::Numeric(format!(
                        "loss is {v} after perturbing {name}[{k}]"
                    )));
                }
                Ok(v)
            };
            let mut probe = || -> Result<[f64; 4]> {
                Ok([
                    eval(store, original + 2.0 * epsilon)?,
                    eval(store, original + epsilon)?,
                    eval(store, original - epsilon)?,
                    eval(store, original - 2.0 * epsilon)?,
                ])
            };
            let probes = probe();
            store.value_mut(id).as_mut_slice()[k] = original;
            let [p2, p1, m1, m2] = probes?;

            let numeric = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * epsilon);
            let a = analytic[id.index()].as_slice()[k];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(1e-8);
            if rel > entry.max_rel_error {
                entry.max_rel_error = rel;
                entry.worst_index = k;
            }
            entry.max_abs_error = entry.max_abs_error.max(abs);
        }
        report.entries.push(entry);
    }
    store.zero_grads();
    Ok(report)
}
