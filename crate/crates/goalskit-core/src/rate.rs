//! Effect-size analogs and KL-divergence centrality scores.
//!
//! The nonlinear GP fit is projected onto linear coefficients β̃ = X†f via the
//! Moore-Penrose pseudoinverse; β̃ inherits a Gaussian posterior from f. Each
//! feature is then scored by how much conditioning β̃_j = 0 deforms the
//! posterior of the remaining coefficients, measured as
//! KL[p(β̃_{−j}) ‖ p(β̃_{−j} | β̃_j = 0)], and the scores are normalized to
//! sum to one.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gp::FittedGP;
use crate::linalg;

/// Singular values below this fraction of σ_max are truncated in X†.
pub const PINV_RCOND: f64 = 1e-10;

/// Largest J for which the per-feature definitional KL path is used; beyond
/// it the precision-matrix identity takes over (same quantity, O(J³) total
/// instead of O(J⁴)).
pub const RATE_DEFINITIONAL_MAX_J: usize = 256;

/// Gaussian posterior of the projected linear coefficients β̃.
#[derive(Clone, Debug)]
pub struct EsaPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Per-feature divergences and their normalization.
#[derive(Clone, Debug)]
pub struct RateReport {
    /// Nonnegative KL divergences, one per feature.
    pub kld: DVector<f64>,
    /// kld / Σ kld; uniform 1/J when every divergence is zero.
    pub rate: DVector<f64>,
}

/// Posterior of β̃ = X†f: mean X†f̂ and covariance X†·Var(f|y)·X†ᵀ.
pub fn effect_size_analog(g: &FittedGP, d: &Dataset) -> Result<EsaPosterior> {
    if g.n() != d.n() || g.n_features() != d.j() {
        return Err(Error::Mismatch {
            what: "model/dataset shape".to_string(),
            detail: format!(
                "model fit on {}x{}, dataset is {}x{}",
                g.n(),
                g.n_features(),
                d.n(),
                d.j()
            ),
        });
    }
    if g.data_hash() != d.content_hash() {
        return Err(Error::Mismatch {
            what: "model/dataset digest".to_string(),
            detail: "the model was fit on different data".to_string(),
        });
    }
    let pinv = linalg::pseudoinverse(d.x(), PINV_RCOND)?;
    let (f_mean, f_cov) = g.posterior_f(d.y())?;
    let mean = &pinv * f_mean;
    let mut cov = &pinv * f_cov * pinv.transpose();
    linalg::symmetrize(&mut cov);
    Ok(EsaPosterior { mean, cov })
}

/// Normalized distributional-centrality scores from the β̃ posterior.
///
/// The covariance is ridged once with 1e−8·tr(Σ)/J before any conditioning,
/// so every factorized submatrix downstream carries the same regularization
/// and the two evaluation paths stay consistent. Coordinates whose original
/// variance does not exceed that ridge are degenerate: their divergence is
/// set to zero with a warning.
pub fn rate_scores(e: &EsaPosterior) -> Result<RateReport> {
    let j_all = e.mean.len();
    if j_all < 2 {
        return Err(Error::invalid(
            "posterior",
            format!("centrality scores need at least 2 features, got {j_all}"),
        ));
    }
    if e.cov.nrows() != j_all || e.cov.ncols() != j_all {
        return Err(Error::Mismatch {
            what: "posterior shape".to_string(),
            detail: format!(
                "mean has {j_all} entries, covariance is {}x{}",
                e.cov.nrows(),
                e.cov.ncols()
            ),
        });
    }
    if e.mean.iter().any(|v| !v.is_finite()) || e.cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "effect-size posterior".to_string(),
        });
    }

    let ridge = 1e-8 * e.cov.trace() / j_all as f64;
    let degenerate: Vec<bool> = (0..j_all).map(|j| e.cov[(j, j)] <= ridge).collect();
    for (j, deg) in degenerate.iter().enumerate() {
        if *deg {
            log::warn!(
                "coordinate {j} has posterior variance {} at or below the ridge {ridge:.3e}; its divergence is set to 0",
                e.cov[(j, j)]
            );
        }
    }
    let mut sigma = e.cov.clone();
    for i in 0..j_all {
        sigma[(i, i)] += ridge;
    }

    let raw = if j_all <= RATE_DEFINITIONAL_MAX_J {
        kld_definitional(&e.mean, &sigma)?
    } else {
        kld_precision(&e.mean, &sigma)?
    };

    let mut kld = DVector::zeros(j_all);
    for j in 0..j_all {
        if degenerate[j] {
            continue;
        }
        let v = raw[j];
        if v < -1e-10 {
            log::warn!("divergence for coordinate {j} came out {v:.3e}; clamping to 0");
        }
        kld[j] = v.max(0.0);
    }

    let total: f64 = kld.sum();
    let rate = if total > 0.0 {
        &kld / total
    } else {
        DVector::from_element(j_all, 1.0 / j_all as f64)
    };
    Ok(RateReport { kld, rate })
}

/// Is coordinate j exactly uncoupled (zero off-diagonal) with zero mean?
/// Those divergences are identically zero and are returned as exact zeros
/// rather than rounding residue.
fn exactly_null(mean: &DVector<f64>, sigma: &DMatrix<f64>, j: usize) -> bool {
    mean[j] == 0.0
        && (0..mean.len()).all(|i| i == j || (sigma[(i, j)] == 0.0 && sigma[(j, i)] == 0.0))
}

/// Definitional path: for each feature, form the (J−1)-dimensional marginal
/// and the conditional at β̃_j = 0, then apply the two-Gaussian closed form
/// KL = ½[tr(Σ₂⁻¹Σ₁) + ΔᵀΣ₂⁻¹Δ − (J−1) + ln det Σ₂ − ln det Σ₁].
fn kld_definitional(mean: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<Vec<f64>> {
    let j_all = mean.len();
    (0..j_all)
        .into_par_iter()
        .map(|j| {
            if exactly_null(mean, sigma, j) {
                return Ok(0.0);
            }
            let keep: Vec<usize> = (0..j_all).filter(|&i| i != j).collect();
            let m = j_all - 1;
            let mut sig1 = DMatrix::zeros(m, m);
            let mut c = DVector::zeros(m);
            for (a, &ia) in keep.iter().enumerate() {
                c[a] = sigma[(ia, j)];
                for (b, &ib) in keep.iter().enumerate() {
                    sig1[(a, b)] = sigma[(ia, ib)];
                }
            }
            let s_jj = sigma[(j, j)];
            let sig2 = &sig1 - &c * c.transpose() / s_jj;
            let delta = &c * (mean[j] / s_jj); // μ₁ − μ₂
            let (chol1, _) = linalg::cholesky_with_jitter(&sig1, "marginal covariance")?;
            let (chol2, _) = linalg::cholesky_with_jitter(&sig2, "conditional covariance")?;
            let trace = chol2.solve(&sig1).trace();
            let quad = delta.dot(&chol2.solve(&delta));
            let logdets = chol2.ln_determinant() - chol1.ln_determinant();
            Ok(0.5 * (trace + quad - m as f64 + logdets))
        })
        .collect()
}

/// Precision-matrix path: with Λ = Σ⁻¹, the blockwise algebra collapses the
/// same divergence to ½[t − 1 − ln t + μ_j²(λ_jj − 1/σ_jj)] with
/// t = λ_jj·σ_jj, needing one factorization total.
fn kld_precision(mean: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<Vec<f64>> {
    let j_all = mean.len();
    let (chol, _) = linalg::cholesky_with_jitter(sigma, "effect-size covariance")?;
    let lambda = chol.inverse();
    let mut out = Vec::with_capacity(j_all);
    for j in 0..j_all {
        if exactly_null(mean, sigma, j) {
            out.push(0.0);
            continue;
        }
        let t = lambda[(j, j)] * sigma[(j, j)];
        let quad = mean[j] * mean[j] * (lambda[(j, j)] - 1.0 / sigma[(j, j)]);
        out.push(0.5 * (t - 1.0 - t.ln() + quad));
    }
    Ok(out)
}
