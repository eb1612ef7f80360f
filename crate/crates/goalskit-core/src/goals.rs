//! Local and global perturbation-difference importance scores.
//!
//! For a fitted GP with posterior mean f̂ = Kα, nudging feature j of every
//! input by a step ξ moves the posterior mean to (B^(j))ᵀα, where B^(j) is
//! the cross-covariance between the original and shifted inputs. The local
//! score of feature j at sample i is the difference
//!
//!   δ̂^(j)_i = f̂_i − ((B^(j))ᵀα)_i,
//!
//! and the global score is its average over samples. Because the full
//! posterior of (f, g^(1), …, g^(J)) given y is jointly Gaussian, the scores
//! carry closed-form covariances; this module computes those too, plus exact
//! joint posterior draws for small problems.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gp::{FitKernel, FittedGP};
use crate::kernel::{
    apply_cross_gram_transpose, perturbed_cross_gram, perturbed_cross_gram_per_row,
    perturbed_pair_gram, KernelConfig,
};
use crate::linalg;

/// Largest N·J for which exact joint sampling is allowed.
pub const SAMPLE_SIZE_GUARD: usize = 2000;

/// Perturbation size: one constant step for every sample, or one step per
/// sample (e.g. to direct each row toward a reference point).
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum XiSpec {
    Constant(f64),
    PerRow(Vec<f64>),
}

impl XiSpec {
    fn is_exactly_zero(&self) -> bool {
        match self {
            XiSpec::Constant(v) => *v == 0.0,
            XiSpec::PerRow(v) => v.iter().all(|t| *t == 0.0),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        match self {
            XiSpec::Constant(v) => {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        what: "xi".to_string(),
                    });
                }
            }
            XiSpec::PerRow(v) => {
                if v.len() != n {
                    return Err(Error::Mismatch {
                        what: "per-row xi length".to_string(),
                        detail: format!("{} entries for {} rows", v.len(), n),
                    });
                }
                if v.iter().any(|t| !t.is_finite()) {
                    return Err(Error::NonFinite {
                        what: "xi".to_string(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Model metadata copied onto score reports.
#[derive(Clone, Debug, Serialize)]
pub struct ModelMeta {
    pub kernel: String,
    pub theta: Option<f64>,
    pub sigma2: f64,
}

impl ModelMeta {
    pub(crate) fn from_gp(g: &FittedGP) -> Self {
        let (kernel, theta) = match g.kernel() {
            FitKernel::Kernel(KernelConfig::Rbf { theta }) => ("rbf".to_string(), Some(*theta)),
            FitKernel::Kernel(KernelConfig::Linear) => ("linear".to_string(), None),
            FitKernel::Precomputed => ("precomputed".to_string(), None),
        };
        ModelMeta {
            kernel,
            theta,
            sigma2: g.sigma2(),
        }
    }
}

/// Local and global scores for a set of features.
#[derive(Clone, Debug)]
pub struct GoalsReport {
    pub xi: XiSpec,
    /// Feature indices the columns below refer to.
    pub features: Vec<usize>,
    /// N × |features| matrix of local scores.
    pub local: DMatrix<f64>,
    /// Per-feature global scores (column means of `local`).
    pub global: DVector<f64>,
    /// Per-feature magnitude summaries (column means of `|local|`). These
    /// are what rankings use: a feature whose per-sample effects change sign
    /// (as happens when it acts only through interactions) averages to zero
    /// in `global` but not here.
    pub global_abs: DVector<f64>,
    pub meta: ModelMeta,
    /// Posterior SDs of the local scores, same shape as `local` (opt-in).
    pub local_sd: Option<DMatrix<f64>>,
    /// Posterior covariance of the global-score vector (opt-in).
    pub global_cov: Option<DMatrix<f64>>,
}

/// Extras to compute alongside the scores.
#[derive(Clone, Debug, Default)]
pub struct GoalsOptions {
    /// Restrict to these feature indices (default: all of them, in order).
    pub features: Option<Vec<usize>>,
    /// Also compute per-sample posterior SDs (costs one N×N covariance per
    /// feature).
    pub with_local_sd: bool,
    /// Also compute the J×J posterior covariance of the global scores.
    pub with_global_cov: bool,
}

/// Local scores δ̂^(j) = f̂ − (B^(j))ᵀα for each requested feature, plus their
/// column means as global scores.
pub fn goals_local(
    g: &FittedGP,
    d: &Dataset,
    xi: &XiSpec,
    features: Option<&[usize]>,
) -> Result<GoalsReport> {
    goals_local_full(
        g,
        d,
        xi,
        &GoalsOptions {
            features: features.map(|f| f.to_vec()),
            ..GoalsOptions::default()
        },
    )
}

/// As [`goals_local`], optionally with posterior SDs and the global-score
/// covariance.
pub fn goals_local_full(
    g: &FittedGP,
    d: &Dataset,
    xi: &XiSpec,
    opts: &GoalsOptions,
) -> Result<GoalsReport> {
    let cfg = check_alignment(g, d)?;
    xi.validate(d.n())?;
    let n = d.n();
    let features = match &opts.features {
        Some(f) => {
            for &j in f {
                if j >= d.j() {
                    return Err(Error::FeatureIndexOutOfRange {
                        index: j,
                        limit: d.j(),
                    });
                }
            }
            f.clone()
        }
        None => (0..d.j()).collect(),
    };

    let columns: Vec<DVector<f64>> = features
        .par_iter()
        .map(|&j| delta_column(g, d, &cfg, j, xi))
        .collect::<Result<_>>()?;
    let mut local = DMatrix::zeros(n, features.len());
    for (c, col) in columns.iter().enumerate() {
        local.column_mut(c).copy_from(col);
    }
    let global = DVector::from_iterator(
        features.len(),
        columns.iter().map(|col| col.sum() / n as f64),
    );
    let global_abs = DVector::from_iterator(
        features.len(),
        columns
            .iter()
            .map(|col| col.iter().map(|v| v.abs()).sum::<f64>() / n as f64),
    );

    let local_sd = if opts.with_local_sd {
        let mut sd = DMatrix::zeros(n, features.len());
        for (c, &j) in features.iter().enumerate() {
            let cov = cov_for_xi(g, d, &cfg, xi, j, j)?;
            for i in 0..n {
                sd[(i, c)] = cov[(i, i)].max(0.0).sqrt();
            }
        }
        Some(sd)
    } else {
        None
    };

    let global_cov = if opts.with_global_cov {
        let (_, cov) = global_moments_for(g, d, &cfg, xi, &features, &global)?;
        Some(cov)
    } else {
        None
    };

    Ok(GoalsReport {
        xi: xi.clone(),
        features,
        local,
        global,
        global_abs,
        meta: ModelMeta::from_gp(g),
        local_sd,
        global_cov,
    })
}

/// Posterior covariance of δ^(j) (when `l` is absent) or posterior
/// cross-covariance of (δ^(j), δ^(l)).
///
/// Both come from one expression, the conditional-Gaussian identity
/// Cov(f−g^(j), f−g^(l) | y) expanded blockwise:
///
///   Σ^(j,l) = K − KA⁻¹K + D^(j,l) − (B^(j))ᵀA⁻¹B^(l)
///             − B^(l) + KA⁻¹B^(l) − (B^(j))ᵀ + (B^(j))ᵀA⁻¹K,
///
/// with the marginal being the l = j case (D^(j,j) is then the
/// self-covariance of the shifted inputs, which is K itself for
/// shift-invariant kernels). The Monte-Carlo adjudication in the test suite
/// pins this expression against joint sampling.
pub fn goals_local_cov(
    g: &FittedGP,
    d: &Dataset,
    xi: f64,
    j: usize,
    l: Option<usize>,
) -> Result<DMatrix<f64>> {
    let cfg = check_alignment(g, d)?;
    let spec = XiSpec::Constant(xi);
    spec.validate(d.n())?;
    cov_for_xi(g, d, &cfg, &spec, j, l.unwrap_or(j))
}

fn cov_for_xi(
    g: &FittedGP,
    d: &Dataset,
    cfg: &KernelConfig,
    xi: &XiSpec,
    j: usize,
    l: usize,
) -> Result<DMatrix<f64>> {
    let n = d.n();
    if xi.is_exactly_zero() {
        return Ok(DMatrix::zeros(n, n));
    }
    let k = g.gram();
    let (b_j, b_l, d_jl) = match xi {
        XiSpec::Constant(s) => {
            let b_j = perturbed_cross_gram(cfg, d.x(), k, j, *s)?;
            let b_l = if l == j {
                b_j.clone()
            } else {
                perturbed_cross_gram(cfg, d.x(), k, l, *s)?
            };
            let d_jl = perturbed_pair_gram(cfg, d.x(), k, j, l, *s)?;
            (b_j, b_l, d_jl)
        }
        XiSpec::PerRow(_) => {
            return Err(Error::invalid(
                "xi",
                "score covariances are defined for a constant perturbation only",
            ))
        }
    };
    let kv = k.values();
    // One matrix solve per distinct cross-gram.
    let ainv_k = g.solve_a_mat(kv);
    let ainv_bl = g.solve_a_mat(&b_l);
    let mut cov = kv - kv * &ainv_k + d_jl - b_j.transpose() * &ainv_bl - &b_l
        + kv * &ainv_bl
        - b_j.transpose()
        + b_j.transpose() * ainv_k;
    if j == l {
        linalg::symmetrize(&mut cov);
    }
    Ok(cov)
}

/// Posterior mean and covariance of the global-score vector
/// (δ̄^(1), …, δ̄^(J)).
///
/// The mean reuses the local-score columns so the two routes agree exactly;
/// the covariance contracts the blockwise expression with 1/N on both sides:
/// with λ = 1ᵀ(K − KA⁻¹K)1, ψ_j = 1ᵀ(B^(j) − KA⁻¹B^(j))1 and
/// α_jl = 1ᵀ(D^(j,l) − (B^(j))ᵀA⁻¹B^(l))1,
///
///   Cov(δ̄^(j), δ̄^(l) | y) = (λ + α_jl − ψ_j − ψ_l) / N².
pub fn goals_global_moments(
    g: &FittedGP,
    d: &Dataset,
    xi: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let cfg = check_alignment(g, d)?;
    let spec = XiSpec::Constant(xi);
    spec.validate(d.n())?;
    let features: Vec<usize> = (0..d.j()).collect();
    let n = d.n();
    let columns: Vec<DVector<f64>> = features
        .par_iter()
        .map(|&j| delta_column(g, d, &cfg, j, &spec))
        .collect::<Result<_>>()?;
    let mean = DVector::from_iterator(
        features.len(),
        columns.iter().map(|col| col.sum() / n as f64),
    );
    let (_, cov) = global_moments_for(g, d, &cfg, &spec, &features, &mean)?;
    Ok((mean, cov))
}

fn global_moments_for(
    g: &FittedGP,
    d: &Dataset,
    cfg: &KernelConfig,
    xi: &XiSpec,
    features: &[usize],
    mean: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let jn = features.len();
    let n = d.n();
    if xi.is_exactly_zero() {
        return Ok((DVector::zeros(jn), DMatrix::zeros(jn, jn)));
    }
    let s = match xi {
        XiSpec::Constant(s) => *s,
        XiSpec::PerRow(_) => {
            return Err(Error::invalid(
                "xi",
                "score covariances are defined for a constant perturbation only",
            ))
        }
    };
    let kv = g.gram().values();
    let ones = DVector::from_element(n, 1.0);
    let u = kv * &ones; // K1
    let a_inv_u = g.solve_a_vec(&u);
    let lambda = u.sum() - u.dot(&a_inv_u);

    // Row sums r_j = B^(j)1 and the solves A⁻¹r_j, one per feature.
    let mut r = Vec::with_capacity(jn);
    let mut a_inv_r = Vec::with_capacity(jn);
    let mut psi = vec![0.0; jn];
    for (c, &j) in features.iter().enumerate() {
        let b = perturbed_cross_gram(cfg, d.x(), g.gram(), j, s)?;
        let rj = &b * &ones;
        psi[c] = rj.sum() - a_inv_u.dot(&rj);
        a_inv_r.push(g.solve_a_vec(&rj));
        r.push(rj);
    }

    let mut cov = DMatrix::zeros(jn, jn);
    let n2 = (n * n) as f64;
    for (cj, &j) in features.iter().enumerate() {
        for (cl, &l) in features.iter().enumerate().skip(cj) {
            let d_jl = perturbed_pair_gram(cfg, d.x(), g.gram(), j, l, s)?;
            let alpha_jl = d_jl.sum() - r[cj].dot(&a_inv_r[cl]);
            let v = (lambda + alpha_jl - psi[cj] - psi[cl]) / n2;
            cov[(cj, cl)] = v;
            cov[(cl, cj)] = v;
        }
    }
    Ok((mean.clone(), cov))
}

/// Exact draws from the joint posterior of (δ^(1), …, δ^(J)).
///
/// Returns an `n_draws × (N·J)` matrix; within a row the first N entries are
/// δ^(1) at every sample, the next N are δ^(2), and so on. Guarded to
/// N·J ≤ 2000 because the joint covariance is dense.
pub fn goals_sample(
    g: &FittedGP,
    d: &Dataset,
    xi: f64,
    n_draws: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let cfg = check_alignment(g, d)?;
    let spec = XiSpec::Constant(xi);
    spec.validate(d.n())?;
    let (n, j_all) = (d.n(), d.j());
    let dim = n * j_all;
    if dim > SAMPLE_SIZE_GUARD {
        return Err(Error::invalid(
            "n*j",
            format!("joint sampling needs N*J <= {SAMPLE_SIZE_GUARD}, got {dim}"),
        ));
    }
    if xi == 0.0 {
        return Ok(DMatrix::zeros(n_draws, dim));
    }

    // Stack means and blockwise covariances.
    let mut mean = DVector::zeros(dim);
    for j in 0..j_all {
        let col = delta_column(g, d, &cfg, j, &spec)?;
        mean.rows_mut(j * n, n).copy_from(&col);
    }
    let mut cov = DMatrix::zeros(dim, dim);
    for j in 0..j_all {
        for l in j..j_all {
            let block = cov_for_xi(g, d, &cfg, &spec, j, l)?;
            cov.view_mut((j * n, l * n), (n, n)).copy_from(&block);
            cov.view_mut((l * n, j * n), (n, n)).copy_from(&block.transpose());
        }
    }
    linalg::symmetrize(&mut cov);

    let (chol, _) = linalg::cholesky_with_jitter(&cov, "joint score covariance")?;
    let l_factor = chol.l();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut draws = DMatrix::zeros(n_draws, dim);
    let mut z = DVector::zeros(dim);
    for row in 0..n_draws {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let sample = &mean + &l_factor * &z;
        draws.row_mut(row).copy_from(&sample.transpose());
    }
    Ok(draws)
}

/// One local-score column δ̂^(j) = f̂ − (B^(j))ᵀα.
///
/// Constant-ξ paths never materialize B^(j): the RBF route factors the
/// exponent update into O(N) exps around one O(N²) pass over K, and the
/// linear route collapses to the rank-one identity
/// (B^(j))ᵀα = Kα + ξ(x_{•j}ᵀα)1, i.e. δ̂^(j) = −ξ(x_{•j}ᵀα)1, a constant
/// vector. Each feature is computed independently with a fixed summation
/// order, so a subset run reproduces the full run's columns bit for bit.
fn delta_column(
    g: &FittedGP,
    d: &Dataset,
    cfg: &KernelConfig,
    j: usize,
    xi: &XiSpec,
) -> Result<DVector<f64>> {
    let n = d.n();
    if j >= d.j() {
        return Err(Error::FeatureIndexOutOfRange {
            index: j,
            limit: d.j(),
        });
    }
    if xi.is_exactly_zero() {
        return Ok(DVector::zeros(n));
    }
    match xi {
        XiSpec::Constant(s) => match cfg {
            KernelConfig::Linear => {
                let shift = s * d.x().column(j).dot(g.alpha());
                Ok(DVector::from_element(n, -shift))
            }
            KernelConfig::Rbf { .. } => {
                let bt_alpha =
                    apply_cross_gram_transpose(cfg, d.x(), g.gram(), j, *s, g.alpha())?;
                Ok(g.f_hat() - bt_alpha)
            }
        },
        XiSpec::PerRow(v) => {
            let xi_vec = DVector::from_column_slice(v);
            let b = perturbed_cross_gram_per_row(cfg, d.x(), g.gram(), j, &xi_vec)?;
            // Explicit column-dot order, matching the constant-ξ fast path.
            let alpha = g.alpha();
            let mut out = DVector::zeros(n);
            for ip in 0..n {
                let col = b.column(ip);
                let mut acc = 0.0;
                for i in 0..n {
                    acc += col[i] * alpha[i];
                }
                out[ip] = g.f_hat()[ip] - acc;
            }
            Ok(out)
        }
    }
}

/// Generic-path evaluation of one column via the materialized cross-gram:
/// [K − (B^(j))ᵀ]α. Exists so the production fast paths can be checked
/// against the defining expression on demand.
pub fn goals_local_generic(
    g: &FittedGP,
    d: &Dataset,
    xi: f64,
    j: usize,
) -> Result<DVector<f64>> {
    let cfg = check_alignment(g, d)?;
    let b = perturbed_cross_gram(&cfg, d.x(), g.gram(), j, xi)?;
    Ok((g.gram().values() - b.transpose()) * g.alpha())
}

fn check_alignment(g: &FittedGP, d: &Dataset) -> Result<KernelConfig> {
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
    match g.kernel() {
        FitKernel::Kernel(cfg) => Ok(*cfg),
        FitKernel::Precomputed => Err(Error::invalid(
            "model",
            "feature perturbations need a kernel-based fit, not a precomputed covariance",
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::fit;
    use crate::kernel::median_bandwidth;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize, j: usize, seed: u64) -> (Dataset, FittedGP) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, j, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(n, |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v
        });
        let d = Dataset::from_parts(x, y, None)
            .unwrap()
            .standardize()
            .unwrap();
        let cfg = KernelConfig::Rbf {
            theta: median_bandwidth(d.x()).unwrap(),
        };
        let g = fit(&d, &cfg, Some(0.3)).unwrap();
        (d, g)
    }

    fn setup_linear(n: usize, j: usize, seed: u64) -> (Dataset, FittedGP) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, j, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(n, |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v
        });
        let d = Dataset::from_parts(x, y, None)
            .unwrap()
            .standardize()
            .unwrap();
        let g = fit(&d, &KernelConfig::Linear, Some(0.5)).unwrap();
        (d, g)
    }

    #[test]
    fn zero_xi_gives_exact_zeros_everywhere() {
        let (d, g) = setup(15, 4, 1);
        let rep = goals_local(&g, &d, &XiSpec::Constant(0.0), None).unwrap();
        assert!(rep.local.iter().all(|v| v.to_bits() == 0.0f64.to_bits()));
        assert!(rep.global.iter().all(|v| v.to_bits() == 0.0f64.to_bits()));
        let cov = goals_local_cov(&g, &d, 0.0, 1, None).unwrap();
        assert!(cov.iter().all(|v| *v == 0.0));
        let (m, c) = goals_global_moments(&g, &d, 0.0).unwrap();
        assert!(m.iter().all(|v| *v == 0.0));
        assert!(c.iter().all(|v| *v == 0.0));
        let draws = goals_sample(&g, &d, 0.0, 5, 7).unwrap();
        assert!(draws.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rbf_fast_path_matches_generic_expression() {
        let (d, g) = setup(40, 6, 2);
        let rep = goals_local(&g, &d, &XiSpec::Constant(1.0), None).unwrap();
        for j in 0..6 {
            let generic = goals_local_generic(&g, &d, 1.0, j).unwrap();
            let diff = (rep.local.column(j) - &generic).amax();
            assert!(diff < 1e-12, "feature {j}: {diff}");
        }
    }

    #[test]
    fn linear_fast_path_matches_generic_expression() {
        let (d, g) = setup_linear(30, 5, 3);
        for &xi in &[0.05, 1.0, 2.0] {
            let rep = goals_local(&g, &d, &XiSpec::Constant(xi), None).unwrap();
            for j in 0..5 {
                let generic = goals_local_generic(&g, &d, xi, j).unwrap();
                let diff = (rep.local.column(j) - &generic).amax();
                assert!(diff < 1e-12, "xi={xi} feature {j}: {diff}");
                // The fast path is the constant vector −ξ(x_{•j}ᵀα)1.
                let expect = -xi * d.x().column(j).dot(g.alpha());
                assert!((rep.local[(0, j)] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn global_scores_are_column_means() {
        let (d, g) = setup(25, 4, 4);
        let rep = goals_local(&g, &d, &XiSpec::Constant(1.0), None).unwrap();
        for j in 0..4 {
            let mean = rep.local.column(j).sum() / 25.0;
            assert!((rep.global[j] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn subset_run_reproduces_full_run_columns_bitwise() {
        let (d, g) = setup(30, 5, 5);
        let full = goals_local(&g, &d, &XiSpec::Constant(0.5), None).unwrap();
        for j in 0..5 {
            let sub = goals_local(&g, &d, &XiSpec::Constant(0.5), Some(&[j])).unwrap();
            assert_eq!(sub.features, vec![j]);
            for i in 0..30 {
                assert_eq!(sub.local[(i, 0)].to_bits(), full.local[(i, j)].to_bits());
            }
            assert_eq!(sub.global[0].to_bits(), full.global[j].to_bits());
        }
    }

    #[test]
    fn covariance_diagonal_is_nonnegative() {
        let (d, g) = setup(30, 4, 6);
        for j in 0..4 {
            let cov = goals_local_cov(&g, &d, 1.0, j, None).unwrap();
            let min_diag = (0..30).map(|i| cov[(i, i)]).fold(f64::INFINITY, f64::min);
            assert!(min_diag >= -1e-8, "feature {j}: min diag {min_diag}");
        }
    }

    #[test]
    fn global_covariance_agrees_with_contracted_blocks() {
        // Dual route: (λ, ψ, α)-assembled covariance vs 1ᵀΣ^(j,l)1/N².
        let (d, g) = setup(20, 3, 7);
        let xi = 0.8;
        let (_, cov) = goals_global_moments(&g, &d, xi).unwrap();
        let n2 = 400.0;
        for j in 0..3 {
            for l in 0..3 {
                let block = goals_local_cov(&g, &d, xi, j, Some(l)).unwrap();
                let contracted = block.sum() / n2;
                assert!(
                    (cov[(j, l)] - contracted).abs() < 1e-10,
                    "({j},{l}): {} vs {contracted}",
                    cov[(j, l)]
                );
            }
        }
    }

    #[test]
    fn global_moment_means_match_local_column_means() {
        let (d, g) = setup(20, 4, 8);
        let rep = goals_local(&g, &d, &XiSpec::Constant(1.0), None).unwrap();
        let (mean, _) = goals_global_moments(&g, &d, 1.0).unwrap();
        for j in 0..4 {
            assert!((mean[j] - rep.global[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn marginal_cov_is_cross_cov_at_equal_indices() {
        let (d, g) = setup(18, 3, 9);
        let marg = goals_local_cov(&g, &d, 1.0, 2, None).unwrap();
        let cross = goals_local_cov(&g, &d, 1.0, 2, Some(2)).unwrap();
        assert!((marg - cross).abs().max() < 1e-12);
    }

    #[test]
    fn sampling_is_seed_reproducible_and_centered() {
        let (d, g) = setup(12, 3, 10);
        let a = goals_sample(&g, &d, 1.0, 50, 99).unwrap();
        let b = goals_sample(&g, &d, 1.0, 50, 99).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        let c = goals_sample(&g, &d, 1.0, 50, 100).unwrap();
        assert!((&a - &c).abs().max() > 0.0);

        // Empirical mean within 3 SE of the closed-form mean.
        let n_draws = 20_000;
        let draws = goals_sample(&g, &d, 1.0, n_draws, 7).unwrap();
        let rep = goals_local(&g, &d, &XiSpec::Constant(1.0), None).unwrap();
        for j in 0..3 {
            let block = goals_local_cov(&g, &d, 1.0, j, None).unwrap();
            for i in 0..12 {
                let col = j * 12 + i;
                let emp: f64 = draws.column(col).sum() / n_draws as f64;
                let se = (block[(i, i)].max(0.0) / n_draws as f64).sqrt();
                let dev = (emp - rep.local[(i, j)]).abs();
                assert!(dev <= 3.0 * se + 1e-12, "({i},{j}): dev {dev}, se {se}");
            }
        }
    }

    #[test]
    fn sampling_guard_rejects_large_problems() {
        let (d, g) = setup(30, 70, 11); // 2100 > 2000
        assert!(goals_sample(&g, &d, 1.0, 2, 1).is_err());
    }

    #[test]
    fn per_row_xi_with_equal_entries_matches_constant_path() {
        let (d, g) = setup(25, 4, 12);
        let constant = goals_local(&g, &d, &XiSpec::Constant(0.7), None).unwrap();
        let per_row = goals_local(&g, &d, &XiSpec::PerRow(vec![0.7; 25]), None).unwrap();
        let diff = (&constant.local - &per_row.local).abs().max();
        assert!(diff < 1e-12, "constant vs per-row: {diff}");
    }

    #[test]
    fn local_sd_matches_covariance_diagonal() {
        let (d, g) = setup(15, 3, 13);
        let rep = goals_local_full(
            &g,
            &d,
            &XiSpec::Constant(1.0),
            &GoalsOptions {
                with_local_sd: true,
                with_global_cov: true,
                ..GoalsOptions::default()
            },
        )
        .unwrap();
        let sd = rep.local_sd.as_ref().unwrap();
        for j in 0..3 {
            let cov = goals_local_cov(&g, &d, 1.0, j, None).unwrap();
            for i in 0..15 {
                assert!((sd[(i, j)] - cov[(i, i)].max(0.0).sqrt()).abs() < 1e-12);
            }
        }
        let (_, moments_cov) = goals_global_moments(&g, &d, 1.0).unwrap();
        let gc = rep.global_cov.as_ref().unwrap();
        assert!((gc - &moments_cov).abs().max() < 1e-14);
    }

    #[test]
    fn linearity_in_the_response() {
        // δ̂ is linear in y once the matrix A is fixed: refits with the same
        // kernel and σ² share A, so scores on y₁, y₂, y₁+y₂ are additive.
        let (d, g) = setup(20, 3, 14);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let y1 = DVector::from_fn(20, |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v
        });
        let y2 = DVector::from_fn(20, |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v
        });
        let cfg = *g.kernel().config().unwrap();
        let refit = |y: &DVector<f64>| -> (Dataset, FittedGP) {
            let dd = Dataset::from_standardized_parts(
                d.x().clone(),
                y.clone(),
                d.feature_names().to_vec(),
                DVector::zeros(3),
                DVector::from_element(3, 1.0),
                0.0,
                1.0,
            )
            .unwrap();
            let gg = fit(&dd, &cfg, Some(g.sigma2())).unwrap();
            (dd, gg)
        };
        let (d1, g1) = refit(&y1);
        let (d2, g2) = refit(&y2);
        let (d12, g12) = refit(&(&y1 + &y2));
        let r1 = goals_local(&g1, &d1, &XiSpec::Constant(1.0), None).unwrap();
        let r2 = goals_local(&g2, &d2, &XiSpec::Constant(1.0), None).unwrap();
        let r12 = goals_local(&g12, &d12, &XiSpec::Constant(1.0), None).unwrap();
        let diff = (&r1.local + &r2.local - &r12.local).abs().max();
        assert!(diff < 1e-10, "additivity violated: {diff}");
    }

    #[test]
    fn mismatched_dataset_is_rejected() {
        let (d, g) = setup(15, 3, 16);
        let (other, _) = setup(15, 3, 17);
        assert!(goals_local(&g, &other, &XiSpec::Constant(1.0), None).is_err());
        assert!(goals_local(&g, &d, &XiSpec::Constant(1.0), Some(&[3])).is_err());
    }

    #[test]
    fn precomputed_covariance_models_are_rejected() {
        let (d, _) = setup(15, 3, 18);
        let k = crate::kernel::gram_matrix(
            &KernelConfig::Rbf { theta: 0.2 },
            d.x(),
        )
        .unwrap();
        let g = crate::gp::fit_with_gram(&d, k, Some(0.3)).unwrap();
        assert!(goals_local(&g, &d, &XiSpec::Constant(1.0), None).is_err());
    }
}
