//! Small internal linear-algebra helpers shared across modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Escalating-jitter Cholesky.
///
/// Attempts a plain factorization first; on failure adds `10^k · 1e-10 · mean(diag)`
/// to the diagonal for k = 0, 1, … until the ridge reaches `1e-4 · mean(diag)`,
/// then gives up. Returns the factorization together with the jitter actually
/// added (0.0 when none was needed).
pub(crate) fn cholesky_with_jitter(
    a: &DMatrix<f64>,
    what: &str,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    debug_assert_eq!(a.nrows(), a.ncols());
    if let Some(chol) = a.clone().cholesky() {
        return Ok((chol, 0.0));
    }
    let mean_diag = a.diagonal().mean().abs();
    let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let mut jitter = 1e-10 * scale;
    let max_jitter = 1e-4 * scale;
    while jitter <= max_jitter {
        let mut ridged = a.clone();
        for i in 0..ridged.nrows() {
            ridged[(i, i)] += jitter;
        }
        if let Some(chol) = ridged.cholesky() {
            return Ok((chol, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::CholeskyFailure {
        what: what.to_string(),
        max_jitter,
    })
}

/// Replace `m` with its symmetric part `(m + mᵀ)/2`.
pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    for i in 0..n {
        for k in (i + 1)..n {
            let avg = 0.5 * (m[(i, k)] + m[(k, i)]);
            m[(i, k)] = avg;
            m[(k, i)] = avg;
        }
    }
}

/// Moore-Penrose pseudoinverse via SVD.
///
/// Singular values at or below `rcond · σ_max` are truncated to zero. For an
/// N×J input the result is J×N.
pub(crate) fn pseudoinverse(x: &DMatrix<f64>, rcond: f64) -> Result<DMatrix<f64>> {
    let svd = x.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd requested u");
    let v_t = svd.v_t.as_ref().expect("svd requested v_t");
    let smax = svd.singular_values.max();
    if !smax.is_finite() {
        return Err(Error::NonFinite {
            what: "singular values of design matrix".to_string(),
        });
    }
    let cut = rcond * smax;
    let r = svd.singular_values.len();
    let mut inv_s = DVector::<f64>::zeros(r);
    for i in 0..r {
        let s = svd.singular_values[i];
        if s > cut {
            inv_s[i] = 1.0 / s;
        }
    }
    // X = U Σ Vᵀ  ⇒  X† = V Σ† Uᵀ
    let mut scaled_ut = u.transpose();
    for i in 0..r {
        let row_scale = inv_s[i];
        scaled_ut.row_mut(i).scale_mut(row_scale);
    }
    Ok(v_t.transpose() * scaled_ut)
}

/// Sample mean with the two-pass formula.
pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance with the N−1 denominator.
pub(crate) fn sample_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() as f64 - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jitter_recovers_semidefinite_matrix() {
        // Rank-1 PSD matrix: plain Cholesky may fail; jitter must rescue it.
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let a = &v * v.transpose();
        let (chol, jitter) = cholesky_with_jitter(&a, "test matrix").unwrap();
        assert!(jitter >= 0.0);
        let l = chol.l();
        let recon = &l * l.transpose();
        for i in 0..3 {
            for k in 0..3 {
                assert!((recon[(i, k)] - a[(i, k)]).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn jitter_gives_up_on_indefinite_matrix() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -5.0, 1.0]));
        let err = cholesky_with_jitter(&a, "indefinite").unwrap_err();
        assert_eq!(err.class(), crate::error::ErrorClass::Numerical);
    }

    #[test]
    fn pseudoinverse_matches_normal_equations_on_full_rank_tall_matrix() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let x = DMatrix::from_fn(8, 3, |_, _| StandardNormal.sample(&mut rng));
        let pinv = pseudoinverse(&x, 1e-10).unwrap();
        // For full column rank, X† = (XᵀX)⁻¹Xᵀ.
        let xtx = x.transpose() * &x;
        let oracle = xtx.try_inverse().unwrap() * x.transpose();
        let diff = (&pinv - &oracle).abs().max();
        assert!(diff < 1e-10, "pinv mismatch {diff}");
    }

    #[test]
    fn pseudoinverse_truncates_tiny_directions() {
        // Rank-1 matrix: X† X X† = X† must still hold after truncation.
        let u = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let v = DVector::from_vec(vec![2.0, 1.0, -1.0]);
        let x = &u * v.transpose();
        let pinv = pseudoinverse(&x, 1e-10).unwrap();
        let diff = (&pinv * &x * &pinv - &pinv).abs().max();
        assert!(diff < 1e-12, "projector identity violated: {diff}");
    }
}
