//! Exact Shapley attributions by full coalition enumeration.
//!
//! Each coalition S of features gets its own GP refit on the column subset
//! X_S (bandwidth re-estimated per coalition, noise variance shared), and
//! feature j's attribution at sample i is the weighted average
//!
//!   φ_j,i = Σ_{S ⊆ 𝒥∖{j}} |S|!(J−|S|−1)!/J! · (f_{S∪{j},i} − f_{S,i}),
//!
//! over all 2^(J−1) sub-coalitions. The empty coalition's fitted values are
//! identically zero (the response is standardized to mean zero). All 2^J
//! coalition fits are performed exactly once and shared across features,
//! which caps the exponential cost at its minimum.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{gram_matrix, median_bandwidth, KernelConfig};
use crate::linalg;

/// Hard cap on features for exact enumeration (2^15 = 32768 refits).
pub const MAX_EXACT_FEATURES: usize = 15;

/// Per-sample and per-feature exact Shapley attributions.
#[derive(Clone, Debug)]
pub struct ShapReport {
    /// N × J matrix of φ_j,i.
    pub local: DMatrix<f64>,
    /// Column means of `local`.
    pub global: DVector<f64>,
    /// Distinct coalitions fitted (always 2^J; each feature averages over
    /// 2^(J−1) of them, paired with and without that feature).
    pub subset_count: usize,
}

/// Exact Shapley values for every sample and feature.
///
/// For the RBF kernel the bandwidth in `cfg` is not reused: every coalition
/// re-estimates it with the median criterion on its own columns, because the
/// coalitions live in different-dimensional spaces. The noise variance is a
/// property of y and is shared unchanged. A coalition whose rows are all
/// identical (no usable bandwidth) contributes the zero function, with a
/// warning.
pub fn exact_shap(d: &Dataset, cfg: &KernelConfig, sigma2: f64) -> Result<ShapReport> {
    if !d.is_standardized() {
        return Err(Error::NotStandardized {
            operation: "exact_shap".to_string(),
        });
    }
    cfg.validate()?;
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::invalid(
            "sigma2",
            format!("noise variance must be finite and positive, got {sigma2}"),
        ));
    }
    let (n, j_all) = (d.n(), d.j());
    if j_all > MAX_EXACT_FEATURES {
        return Err(Error::invalid(
            "features",
            format!("exact enumeration is capped at {MAX_EXACT_FEATURES} features, got {j_all}"),
        ));
    }

    let n_masks = 1usize << j_all;
    let fit_counter = AtomicUsize::new(0);
    // Fitted-value vector for every coalition, indexed by bitmask.
    let fits: Vec<DVector<f64>> = (0..n_masks)
        .into_par_iter()
        .map(|mask| {
            fit_counter.fetch_add(1, Ordering::Relaxed);
            if mask == 0 {
                return Ok(DVector::zeros(n));
            }
            let cols: Vec<usize> = (0..j_all).filter(|&c| mask & (1 << c) != 0).collect();
            let x_s = select_columns(d.x(), &cols);
            coalition_fit(&x_s, cfg, sigma2, d.y())
        })
        .collect::<Result<_>>()?;
    debug_assert_eq!(fit_counter.load(Ordering::Relaxed), n_masks);

    let weights = shapley_weights(j_all);
    let mut local = DMatrix::zeros(n, j_all);
    for j in 0..j_all {
        let bit = 1usize << j;
        let mut col = DVector::zeros(n);
        for mask in 0..n_masks {
            if mask & bit != 0 {
                continue;
            }
            let w = weights[(mask as u32).count_ones() as usize];
            col.axpy(w, &(&fits[mask | bit] - &fits[mask]), 1.0);
        }
        local.column_mut(j).copy_from(&col);
    }
    let global = DVector::from_iterator(j_all, (0..j_all).map(|j| local.column(j).sum() / n as f64));
    Ok(ShapReport {
        local,
        global,
        subset_count: n_masks,
    })
}

/// Fitted values K_S(K_S + σ²I)⁻¹y for one coalition.
fn coalition_fit(
    x_s: &DMatrix<f64>,
    cfg: &KernelConfig,
    sigma2: f64,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    let cfg_s = match cfg {
        KernelConfig::Rbf { .. } => match median_bandwidth(x_s) {
            Ok(theta) => KernelConfig::Rbf { theta },
            Err(Error::ZeroMedianDistance) => {
                log::warn!(
                    "coalition of {} column(s) has all-identical rows; using the zero function",
                    x_s.ncols()
                );
                return Ok(DVector::zeros(y.len()));
            }
            Err(e) => return Err(e),
        },
        KernelConfig::Linear => KernelConfig::Linear,
    };
    let k = gram_matrix(&cfg_s, x_s)?;
    let mut a = k.values().clone();
    for i in 0..a.nrows() {
        a[(i, i)] += sigma2;
    }
    let (chol, _) = linalg::cholesky_with_jitter(&a, "coalition marginal covariance")?;
    Ok(k.values() * chol.solve(y))
}

/// Coalition weights w_s = s!(J−1−s)!/J! for s = 0..J−1, computed with exact
/// integer factorials (J ≤ 15 keeps every factorial exactly representable)
/// and divided once.
fn shapley_weights(j_all: usize) -> Vec<f64> {
    let fact: Vec<u128> = (0..=j_all).scan(1u128, |acc, k| {
        if k > 0 {
            *acc *= k as u128;
        }
        Some(*acc)
    })
    .collect();
    (0..j_all)
        .map(|s| (fact[s] * fact[j_all - 1 - s]) as f64 / fact[j_all] as f64)
        .collect()
}

/// Exact-integer form of the weight normalization:
/// Σ_s C(J−1,s)·s!(J−1−s)! must equal J! identically.
#[cfg(test)]
pub(crate) fn weight_sum_is_exactly_one(j_all: usize) -> bool {
    let fact: Vec<u128> = (0..=j_all).scan(1u128, |acc, k| {
        if k > 0 {
            *acc *= k as u128;
        }
        Some(*acc)
    })
    .collect();
    let choose = |n: usize, r: usize| fact[n] / (fact[r] * fact[n - r]);
    let total: u128 = (0..j_all)
        .map(|s| choose(j_all - 1, s) * fact[s] * fact[j_all - 1 - s])
        .sum();
    total == fact[j_all]
}

fn select_columns(x: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), cols.len(), |r, c| x[(r, cols[c])])
}
