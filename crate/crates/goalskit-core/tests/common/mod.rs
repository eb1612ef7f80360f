//! Shared helpers for the integration suites. Everything statistical or
//! kernel-shaped here is computed from its textbook definition, independently
//! of the library code paths under test, so cross-checks stay two-route.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use goalskit_core::dataset::Dataset;
use goalskit_core::gp::FittedGP;
use goalskit_core::kernel::KernelConfig;

/// Small standardized dataset with a nonlinear response.
pub fn toy_dataset(n: usize, j: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, j, |_, _| {
        let v: f64 = StandardNormal.sample(&mut rng);
        v
    });
    let y = DVector::from_fn(n, |i, _| {
        let noise: f64 = StandardNormal.sample(&mut rng);
        let mut v = (x[(i, 0)]).sin() + 0.3 * noise;
        if j > 2 {
            v += x[(i, 1)] * x[(i, 2)];
        }
        v
    });
    Dataset::from_parts(x, y, None)
        .unwrap()
        .standardize()
        .unwrap()
}

/// Cross-kernel matrix k(a_i, b_k) evaluated entry by entry from the
/// definition (no factored updates, no reuse of the library's gram code).
pub fn kernel_direct(cfg: &KernelConfig, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), b.nrows());
    for i in 0..a.nrows() {
        for k in 0..b.nrows() {
            out[(i, k)] = match cfg {
                KernelConfig::Rbf { theta } => {
                    let mut sq = 0.0;
                    for c in 0..a.ncols() {
                        let diff = a[(i, c)] - b[(k, c)];
                        sq += diff * diff;
                    }
                    (-theta * sq).exp()
                }
                KernelConfig::Linear => {
                    let mut dot = 0.0;
                    for c in 0..a.ncols() {
                        dot += a[(i, c)] * b[(k, c)];
                    }
                    dot
                }
            };
        }
    }
    out
}

/// Copy of `x` with `xi` added to every entry of column `j`.
pub fn shift_column(x: &DMatrix<f64>, j: usize, xi: f64) -> DMatrix<f64> {
    let mut out = x.clone();
    for i in 0..out.nrows() {
        out[(i, j)] += xi;
    }
    out
}

/// Copy of `x` with `xi[i]` added to entry (i, j).
pub fn shift_column_per_row(x: &DMatrix<f64>, j: usize, xi: &[f64]) -> DMatrix<f64> {
    let mut out = x.clone();
    for i in 0..out.nrows() {
        out[(i, j)] += xi[i];
    }
    out
}

/// Joint posterior of the stacked vector (f, g^(j1), …, g^(jm)) given y,
/// built entirely from direct kernel evaluations at the original and shifted
/// inputs plus an in-test matrix inverse of A = K + (σ²+jitter)·I. The only
/// inputs taken from the fitted model are the scalars σ² and jitter.
pub fn joint_posterior_direct(
    d: &Dataset,
    g: &FittedGP,
    cfg: &KernelConfig,
    features: &[usize],
    xi: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = d.n();
    let x = d.x();
    let shifted: Vec<DMatrix<f64>> = features
        .iter()
        .map(|&j| shift_column(x, j, xi))
        .collect();
    let mut points: Vec<&DMatrix<f64>> = vec![x];
    points.extend(shifted.iter());

    let k = kernel_direct(cfg, x, x);
    let a = &k + DMatrix::identity(n, n) * (g.sigma2() + g.jitter());
    let a_inv = a.try_inverse().expect("A is positive definite");
    let alpha = &a_inv * d.y();

    let blocks = points.len();
    let dim = blocks * n;
    let mut mean = DVector::zeros(dim);
    let mut cov = DMatrix::zeros(dim, dim);
    for s in 0..blocks {
        // Posterior mean at block s: k(Z_s, X) A⁻¹ y.
        let k_sx = kernel_direct(cfg, points[s], x);
        mean.rows_mut(s * n, n).copy_from(&(&k_sx * &alpha));
        for t in 0..blocks {
            // Posterior covariance: k(Z_s, Z_t) − k(Z_s, X) A⁻¹ k(X, Z_t).
            let k_st = kernel_direct(cfg, points[s], points[t]);
            let k_xt = kernel_direct(cfg, x, points[t]);
            let block = &k_st - &k_sx * &a_inv * &k_xt;
            cov.view_mut((s * n, t * n), (n, n)).copy_from(&block);
        }
    }
    // Symmetrize away the inverse's rounding asymmetry.
    let cov_t = cov.transpose();
    cov = (cov + cov_t) * 0.5;
    (mean, cov)
}

/// Lower Cholesky factor with escalating diagonal jitter; the oracle
/// covariances are PSD but often numerically rank-deficient.
pub fn jittered_cholesky(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let dim = cov.nrows();
    let scale = cov.diagonal().iter().fold(0.0f64, |a, &b| a.max(b)).max(1e-300);
    let mut jitter = 0.0;
    for _ in 0..24 {
        let attempt = cov + DMatrix::identity(dim, dim) * jitter;
        if let Some(chol) = attempt.cholesky() {
            return chol.l();
        }
        jitter = if jitter == 0.0 { scale * 1e-14 } else { jitter * 10.0 };
    }
    panic!("covariance not factorizable even with jitter");
}

/// Empirical mean and covariance (ddof = 1) of `m` Monte-Carlo draws of the
/// projected Gaussian `proj · N(mean, cov)`. Projecting before sampling is
/// exact: proj·(mean + L·z) is computed with the same z stream either way.
pub fn mc_projected_moments(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    proj: &DMatrix<f64>,
    m: usize,
    seed: u64,
) -> (DVector<f64>, DMatrix<f64>) {
    let dim = mean.len();
    assert_eq!(proj.ncols(), dim);
    let r = proj.nrows();
    let l = jittered_cholesky(cov);
    let pl = proj * &l;
    let pmean = proj * mean;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum: DVector<f64> = DVector::zeros(r);
    let mut cross: DMatrix<f64> = DMatrix::zeros(r, r);
    let mut z: DVector<f64> = DVector::zeros(dim);
    for _ in 0..m {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(&mut rng);
        }
        let v = &pmean + &pl * &z;
        sum += &v;
        // Accumulate the upper triangle of v vᵀ.
        for a in 0..r {
            for b in a..r {
                cross[(a, b)] += v[a] * v[b];
            }
        }
    }
    let mf = m as f64;
    let emp_mean = &sum / mf;
    let mut emp_cov = DMatrix::zeros(r, r);
    for a in 0..r {
        for b in a..r {
            let c = (cross[(a, b)] - sum[a] * sum[b] / mf) / (mf - 1.0);
            emp_cov[(a, b)] = c;
            emp_cov[(b, a)] = c;
        }
    }
    (emp_mean, emp_cov)
}

/// Standard error of an empirical covariance entry between Gaussian
/// coordinates a and b: sqrt((σ_aa σ_bb + σ_ab²)/m).
pub fn cov_entry_se(cov: &DMatrix<f64>, a: usize, b: usize, m: usize) -> f64 {
    ((cov[(a, a)] * cov[(b, b)] + cov[(a, b)] * cov[(a, b)]) / m as f64).sqrt()
}

/// 1-based rank of each feature when sorted by |score| descending, ties by
/// index (matching the ranking the evaluation harness uses).
pub fn ranks_by_abs_desc(scores: &DVector<f64>) -> Vec<usize> {
    let j = scores.len();
    let mut order: Vec<usize> = (0..j).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .abs()
            .partial_cmp(&scores[a].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut ranks = vec![0usize; j];
    for (pos, &feature) in order.iter().enumerate() {
        ranks[feature] = pos + 1;
    }
    ranks
}

pub fn median_of_usize(values: &mut [usize]) -> f64 {
    values.sort_unstable();
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2] as f64
    } else {
        (values[n / 2 - 1] + values[n / 2]) as f64 / 2.0
    }
}

/// Average ranks with midranks on ties.
fn midranks(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut k = i;
        while k + 1 < n && v[order[k + 1]] == v[order[i]] {
            k += 1;
        }
        let avg = (i + k) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=k] {
            ranks[idx] = avg;
        }
        i = k + 1;
    }
    ranks
}

/// Spearman rank correlation with midranks on ties.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ra = midranks(a);
    let rb = midranks(b);
    pearson(&ra, &rb)
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for i in 0..a.len() {
        let da = a[i] - ma;
        let db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    sab / (saa.sqrt() * sbb.sqrt())
}

/// One-sided p-value for H1: ρ > 0 via the t approximation.
pub fn correlation_p_positive(rho: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    StudentsT::new(0.0, 1.0, df).unwrap().sf(t)
}

/// Two-sided Welch t-test p-value for a difference in means.
pub fn welch_p_two_sided(a: &[f64], b: &[f64]) -> f64 {
    let na = a.len() as f64;
    let nb = b.len() as f64;
    let ma = a.iter().sum::<f64>() / na;
    let mb = b.iter().sum::<f64>() / nb;
    let va = a.iter().map(|v| (v - ma) * (v - ma)).sum::<f64>() / (na - 1.0);
    let vb = b.iter().map(|v| (v - mb) * (v - mb)).sum::<f64>() / (nb - 1.0);
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        return if ma == mb { 1.0 } else { 0.0 };
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2
        / ((va / na) * (va / na) / (na - 1.0) + (vb / nb) * (vb / nb) / (nb - 1.0));
    2.0 * StudentsT::new(0.0, 1.0, df).unwrap().sf(t.abs())
}

/// Chi-square goodness-of-fit p-value against the uniform distribution.
pub fn chi2_uniform_p(counts: &[usize]) -> f64 {
    let k = counts.len();
    let total: usize = counts.iter().sum();
    let expected = total as f64 / k as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    ChiSquared::new((k - 1) as f64).unwrap().sf(stat)
}

/// Trapezoidal AUC of a ranking: causal features scored by `key` against
/// the rest (independent re-implementation for cross-checks).
pub fn auc_by_pairs(scores: &[f64], causal: &[usize]) -> f64 {
    let causal_set: std::collections::HashSet<usize> = causal.iter().copied().collect();
    let mut wins = 0.0;
    let mut total = 0.0;
    for (j, &sj) in scores.iter().enumerate() {
        if !causal_set.contains(&j) {
            continue;
        }
        for (l, &sl) in scores.iter().enumerate() {
            if causal_set.contains(&l) {
                continue;
            }
            total += 1.0;
            if sj > sl {
                wins += 1.0;
            } else if sj == sl {
                wins += 0.5;
            }
        }
    }
    wins / total
}
