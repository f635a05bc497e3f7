use super::{DenseMatrix, Real, Rng};
use crate::error::{Error, Result};

/// Standard deviation of the Gaussian used for non-recurrent matrices.
pub const INIT_STD: f64 = 0.01;

/// I.i.d. `Normal(0, 0.01²)` entries.
pub fn init_gaussian<F: Real>(rows: usize, cols: usize, rng: &mut Rng) -> Result<DenseMatrix<F>> {
    if rows == 0 || cols == 0 {
        return Err(Error::shape(format!(
            "gaussian init of a {rows}x{cols} matrix"
        )));
    }
    let data = (0..rows * cols)
        .map(|_| F::lit(rng.normal(0.0, INIT_STD)))
        .collect();
    DenseMatrix::from_vec(rows, cols, data)
}

/// Random orthogonal `n × n` matrix: Gram–Schmidt (applied twice) on the
/// columns of a standard Gaussian matrix, with column signs fixed so the
/// implied `R` has a positive diagonal.
pub fn init_orthogonal<F: Real>(n: usize, rng: &mut Rng) -> Result<DenseMatrix<F>> {
    if n == 0 {
        return Err(Error::shape("orthogonal init of a 0x0 matrix"));
    }
    // Columns stored contiguously while orthogonalising.
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.normal(0.0, 1.0)).collect())
        .collect();
    for j in 0..n {
        let (done, rest) = cols.split_at_mut(j);
        let v = &mut rest[0];
        let original_norm = norm(v);
        for _ in 0..2 {
            for q in done.iter() {
                let proj: f64 = q.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(x, qv)| *x -= proj * qv);
            }
        }
        let len = norm(v);
        if len <= 1e-10 * original_norm.max(1.0) {
            // Degenerate draw, probability zero in exact arithmetic.
            return init_orthogonal(n, &mut rng.fork(j as u64 + 1));
        }
        v.iter_mut().for_each(|x| *x /= len);
    }
    let mut m = DenseMatrix::zeros(n, n);
    for (c, col) in cols.iter().enumerate() {
        for (r, &v) in col.iter().enumerate() {
            m.set(r, c, F::lit(v));
        }
    }
    Ok(m)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
