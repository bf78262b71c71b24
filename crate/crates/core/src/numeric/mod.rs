//! Dense kernels, spectral-norm estimation, softmax and the finite-difference
//! gradient oracle.

mod matrix;
mod rng;

pub use matrix::Matrix;
pub use rng::Rng;

use crate::error::{Error, Result};

pub const DEFAULT_SPECTRAL_TOL: f64 = 1e-6;
pub const DEFAULT_SPECTRAL_MAX_ITER: usize = 1000;

/// Seed for the power-iteration start vector, mixed with the matrix shape.
const POWER_ITERATION_SEED: u64 = 0x0005_eed0_f5be_c7a1;

/// Largest singular value of `m`, by power iteration on `mᵀm`.
///
/// Stops once the relative change of the estimate drops below `tol`.
pub fn spectral_norm(m: &Matrix, tol: f64, max_iter: usize) -> Result<f64> {
    power_iteration(m, tol, max_iter).map(|trace| *trace.last().unwrap_or(&0.0))
}

/// Every intermediate estimate of [`spectral_norm`], first to last.
///
/// The Rayleigh quotient of a PSD matrix is non-decreasing along power
/// iteration, so the returned sequence is monotone up to rounding.
pub fn power_iteration(m: &Matrix, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    if !(tol > 0.0) {
        return Err(Error::domain("spectral_norm tolerance must be positive"));
    }
    if !m.is_finite() {
        return Err(Error::numeric("spectral_norm of non-finite matrix"));
    }
    let gram = m.gram();
    let n = gram.rows();
    if n == 0 || gram.as_slice().iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0]);
    }

    let mut rng = Rng::seed_from(POWER_ITERATION_SEED ^ ((m.rows() as u64) << 32 | m.cols() as u64));
    let mut x: Vec<f64> = (0..n).map(|_| rng.uniform(0.5, 1.5)).collect();
    normalize(&mut x);

    let mut trace = Vec::new();
    let mut prev = f64::NAN;
    for _ in 0..max_iter {
        let y = gram.matvec(&x);
        let rayleigh: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let estimate = rayleigh.max(0.0).sqrt();
        trace.push(estimate);
        if (estimate - prev).abs() <= tol * estimate {
            return Ok(trace);
        }
        prev = estimate;
        x = y;
        if normalize(&mut x) == 0.0 {
            // Start vector fell in the null space of a nonzero matrix.
            return Ok(trace);
        }
    }
    Err(Error::SpectralNotConverged {
        iterations: max_iter,
        estimate: prev,
    })
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|a| *a /= norm);
    }
    norm
}

/// Max-shifted softmax.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::domain("softmax of empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::numeric("softmax of non-finite input"));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Central-difference gradient of `f` at `p` with step `h`.
pub fn finite_diff_grad<F>(mut f: F, p: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::domain("finite-difference step must be positive"));
    }
    let mut point = p.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = point[i];
        point[i] = orig + h;
        let up = f(&point);
        point[i] = orig - h;
        let down = f(&point);
        point[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite function value while differencing coordinate {i}"
            )));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn spectral_norm_of_identity_and_diag() {
        let i = Matrix::identity(2);
        assert_relative_eq!(spectral_norm(&i, 1e-6, 1000).unwrap(), 1.0, max_relative = 1e-6);
        let d = Matrix::diag(&[3.0, 1.0]);
        assert_relative_eq!(spectral_norm(&d, 1e-10, 1000).unwrap(), 3.0, max_relative = 1e-6);
    }

    #[test]
    fn spectral_norm_zero_matrix() {
        assert_eq!(spectral_norm(&Matrix::zeros(3, 2), 1e-6, 10).unwrap(), 0.0);
    }

    #[test]
    fn spectral_norm_reports_non_convergence() {
        let m = Matrix::diag(&[1.0, 0.999_999]);
        match spectral_norm(&m, 1e-300, 3) {
            Err(Error::SpectralNotConverged { iterations, estimate }) => {
                assert_eq!(iterations, 3);
                assert!(estimate > 0.99);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn softmax_basics() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let s = softmax(&[1000.0, 0.0]).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-12 && s[1] < 1e-12);
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn finite_diff_of_quadratic() {
        let g = finite_diff_grad(|p| p.iter().map(|x| x * x).sum(), &[1.0, 2.0], 1e-5).unwrap();
        assert_relative_eq!(g[0], 2.0, epsilon = 1e-8);
        assert_relative_eq!(g[1], 4.0, epsilon = 1e-8);
        let zero = finite_diff_grad(|_| 3.0, &[1.0, 2.0, 3.0], 1e-3).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn finite_diff_propagates_non_finite() {
        let r = finite_diff_grad(|p| if p[0] > 0.0 { f64::NAN } else { 0.0 }, &[0.0], 1e-3);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!((sigmoid(800.0) - 1.0).abs() < 1e-15);
    }
}
