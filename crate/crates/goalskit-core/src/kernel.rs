//! Kernels, gram matrices, and perturbed cross-gram updates.
//!
//! Beyond the usual gram-matrix construction this module implements the
//! cheap update rules for covariances against *feature-shifted* copies of the
//! data: B^(j) holds k(x_i, x_{i′} + ξe_j) and D^(j,l) holds
//! k(x_i + ξe_j, x_{i′} + ξe_l). For the RBF kernel both reduce to an
//! element-wise multiplicative update of K (one scalar exp per entry, no
//! J-dimensional distance recomputation); for the linear kernel they are
//! rank-one additive updates. B^(j) is intentionally *not* symmetric and must
//! never be symmetrized.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;

use crate::error::{Error, Result};

/// Fixed seed for the large-N bandwidth subsample, so repeated runs agree.
pub const MEDIAN_SUBSAMPLE_SEED: u64 = 0x4d45_444e;

/// Rows used to estimate the median pairwise distance when N exceeds it.
pub const MEDIAN_SUBSAMPLE_ROWS: usize = 5000;

/// Kernel family and its hyperparameter.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelConfig {
    /// k(a,b) = exp(−θ‖a−b‖²)
    Rbf { theta: f64 },
    /// k(a,b) = aᵀb
    Linear,
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if let KernelConfig::Rbf { theta } = self {
            if !(theta.is_finite() && *theta > 0.0) {
                return Err(Error::invalid(
                    "theta",
                    format!("rbf bandwidth must be finite and positive, got {theta}"),
                ));
            }
        }
        Ok(())
    }

    /// Shift-invariant kernels satisfy k(a+c, b+c) = k(a,b).
    pub fn is_shift_invariant(&self) -> bool {
        matches!(self, KernelConfig::Rbf { .. })
    }
}

/// Symmetric positive-semidefinite covariance matrix of the training inputs.
#[derive(Clone, Debug)]
pub struct GramMatrix {
    values: DMatrix<f64>,
}

impl GramMatrix {
    /// Wrap a raw symmetric matrix (symmetry enforced by averaging with the
    /// transpose). Useful for precomputed covariances, e.g. the induced gram
    /// of a random-feature model.
    pub fn new(mut values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::invalid(
                "gram",
                format!("matrix is {}x{}, need square", values.nrows(), values.ncols()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "gram matrix".to_string(),
            });
        }
        crate::linalg::symmetrize(&mut values);
        Ok(GramMatrix { values })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }
}

/// Bandwidth by the median criterion: θ = 1/(2m²) with m the median pairwise
/// Euclidean distance. For N > 5000 the median is taken over a fixed-seed
/// subsample of 5000 rows.
pub fn median_bandwidth(x: &DMatrix<f64>) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::TooFewRows { need: 2, found: n });
    }
    let owned_sub;
    let x_eff: &DMatrix<f64> = if n > MEDIAN_SUBSAMPLE_ROWS {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(MEDIAN_SUBSAMPLE_SEED);
        let idx = rand::seq::index::sample(&mut rng, n, MEDIAN_SUBSAMPLE_ROWS).into_vec();
        owned_sub = select_rows(x, &idx);
        &owned_sub
    } else {
        x
    };
    let d2 = squared_distances(x_eff);
    let m_eff = x_eff.nrows();
    let mut dists = Vec::with_capacity(m_eff * (m_eff - 1) / 2);
    for i in 0..m_eff {
        for k in (i + 1)..m_eff {
            dists.push(d2[(i, k)].max(0.0).sqrt());
        }
    }
    dists.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 1 {
        dists[mid]
    } else {
        0.5 * (dists[mid - 1] + dists[mid])
    };
    if median == 0.0 {
        return Err(Error::ZeroMedianDistance);
    }
    Ok(1.0 / (2.0 * median * median))
}

/// Build the training gram matrix K.
pub fn gram_matrix(cfg: &KernelConfig, x: &DMatrix<f64>) -> Result<GramMatrix> {
    cfg.validate()?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "design matrix".to_string(),
        });
    }
    let n = x.nrows();
    let mut k = match cfg {
        KernelConfig::Rbf { theta } => {
            let mut d2 = squared_distances(x);
            for v in d2.iter_mut() {
                *v = (-theta * v.max(0.0)).exp();
            }
            d2
        }
        KernelConfig::Linear => x * x.transpose(),
    };
    crate::linalg::symmetrize(&mut k);
    if matches!(cfg, KernelConfig::Rbf { .. }) {
        for i in 0..n {
            k[(i, i)] = 1.0;
        }
    }
    Ok(GramMatrix { values: k })
}

/// B^(j): covariance between the training rows and the rows with feature `j`
/// shifted by the scalar `xi`; entry (i,i′) is k(x_i, x_{i′} + ξe_j).
///
/// ξ = 0 returns K unchanged. The result is not symmetric in general.
pub fn perturbed_cross_gram(
    cfg: &KernelConfig,
    x: &DMatrix<f64>,
    k: &GramMatrix,
    j: usize,
    xi: f64,
) -> Result<DMatrix<f64>> {
    check_perturbation(cfg, x, k, j, xi)?;
    let n = x.nrows();
    if xi == 0.0 {
        return Ok(k.values().clone());
    }
    let xj = x.column(j);
    let mut b = k.values().clone();
    match cfg {
        KernelConfig::Rbf { theta } => {
            // b_{ii′} = k_{ii′} · exp(−θ[ξ² − 2ξ(x_ij − x_i′j)])
            for ip in 0..n {
                let xpj = xj[ip];
                let mut col = b.column_mut(ip);
                for i in 0..n {
                    col[i] *= (-theta * (xi * xi - 2.0 * xi * (xj[i] - xpj))).exp();
                }
            }
        }
        KernelConfig::Linear => {
            // b_{ii′} = k_{ii′} + ξ·x_ij  (rank-one update K + ξ x_{•j}1ᵀ)
            for ip in 0..n {
                let mut col = b.column_mut(ip);
                for i in 0..n {
                    col[i] += xi * xj[i];
                }
            }
        }
    }
    Ok(b)
}

/// B^(j) with one shift per *perturbed* row: entry (i,i′) is
/// k(x_i, x_{i′} + ξ_{i′}e_j).
pub fn perturbed_cross_gram_per_row(
    cfg: &KernelConfig,
    x: &DMatrix<f64>,
    k: &GramMatrix,
    j: usize,
    xi: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    check_perturbation(cfg, x, k, j, 0.0)?;
    let n = x.nrows();
    if xi.len() != n {
        return Err(Error::Mismatch {
            what: "per-row xi length".to_string(),
            detail: format!("{} entries for {} rows", xi.len(), n),
        });
    }
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "xi vector".to_string(),
        });
    }
    if xi.iter().all(|v| *v == 0.0) {
        return Ok(k.values().clone());
    }
    let xj = x.column(j);
    let mut b = k.values().clone();
    match cfg {
        KernelConfig::Rbf { theta } => {
            for ip in 0..n {
                let s = xi[ip];
                let xpj = xj[ip];
                let mut col = b.column_mut(ip);
                for i in 0..n {
                    col[i] *= (-theta * (s * s - 2.0 * s * (xj[i] - xpj))).exp();
                }
            }
        }
        KernelConfig::Linear => {
            for ip in 0..n {
                let s = xi[ip];
                let mut col = b.column_mut(ip);
                for i in 0..n {
                    col[i] += s * xj[i];
                }
            }
        }
    }
    Ok(b)
}

/// D^(j,l): covariance between the feature-`j`-shifted rows and the
/// feature-`l`-shifted rows; entry (i,i′) is k(x_i + ξe_j, x_{i′} + ξe_l).
///
/// For j = l this is the self-covariance C^(j) of the shifted rows, which
/// equals K exactly for shift-invariant kernels.
pub fn perturbed_pair_gram(
    cfg: &KernelConfig,
    x: &DMatrix<f64>,
    k: &GramMatrix,
    j: usize,
    l: usize,
    xi: f64,
) -> Result<DMatrix<f64>> {
    check_perturbation(cfg, x, k, j, xi)?;
    check_perturbation(cfg, x, k, l, xi)?;
    let n = x.nrows();
    if xi == 0.0 || (j == l && cfg.is_shift_invariant()) {
        return Ok(k.values().clone());
    }
    let xj = x.column(j);
    let xl = x.column(l);
    let mut d = k.values().clone();
    match cfg {
        KernelConfig::Rbf { theta } => {
            // ‖(x_i+ξe_j)−(x_i′+ξe_l)‖² = ‖x_i−x_i′‖² + 2ξ[(x_ij−x_i′j) − (x_il−x_i′l)] + 2ξ²
            for ip in 0..n {
                let xpj = xj[ip];
                let xpl = xl[ip];
                let mut col = d.column_mut(ip);
                for i in 0..n {
                    let cross = 2.0 * xi * ((xj[i] - xpj) - (xl[i] - xpl)) + 2.0 * xi * xi;
                    col[i] *= (-theta * cross).exp();
                }
            }
        }
        KernelConfig::Linear => {
            // (x_i+ξe_j)ᵀ(x_i′+ξe_l) = k_{ii′} + ξ x_il + ξ x_i′j + ξ²·1{j=l}
            let same = if j == l { xi * xi } else { 0.0 };
            for ip in 0..n {
                let xpj = xj[ip];
                let mut col = d.column_mut(ip);
                for i in 0..n {
                    col[i] += xi * xl[i] + xi * xpj + same;
                }
            }
        }
    }
    Ok(d)
}

/// Compute (B^(j))ᵀ v without materializing B^(j).
///
/// For the RBF kernel the exponent factors as
/// exp(−θξ²)·exp(2θξ x_ij)·exp(−2θξ x_i′j), so the product needs one
/// O(N²) pass over K plus O(N) exps; for the linear kernel it is the rank-one
/// identity (B^(j))ᵀv = Kv + ξ(x_{•j}ᵀv)·1. Agrees with the materialized
/// route to ~1e−13; the test suite pins that.
pub fn apply_cross_gram_transpose(
    cfg: &KernelConfig,
    x: &DMatrix<f64>,
    k: &GramMatrix,
    j: usize,
    xi: f64,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_perturbation(cfg, x, k, j, xi)?;
    let n = x.nrows();
    if v.len() != n {
        return Err(Error::Mismatch {
            what: "vector length".to_string(),
            detail: format!("{} entries for {} rows", v.len(), n),
        });
    }
    let kv = k.values();
    let ks = kv.as_slice(); // column-major
    let xj = x.column(j);
    match cfg {
        KernelConfig::Rbf { theta } => {
            if xi == 0.0 {
                return Ok(kv * v);
            }
            let c = (-theta * xi * xi).exp();
            let u: Vec<f64> = (0..n)
                .map(|i| (2.0 * theta * xi * xj[i]).exp() * v[i])
                .collect();
            let mut out = DVector::zeros(n);
            for ip in 0..n {
                let col = &ks[ip * n..(ip + 1) * n];
                let mut acc = 0.0;
                for i in 0..n {
                    acc += col[i] * u[i];
                }
                out[ip] = c * (-2.0 * theta * xi * xj[ip]).exp() * acc;
            }
            Ok(out)
        }
        KernelConfig::Linear => {
            let mut out = kv * v;
            let shift = xi * xj.dot(v);
            for ip in 0..n {
                out[ip] += shift;
            }
            Ok(out)
        }
    }
}

fn check_perturbation(
    cfg: &KernelConfig,
    x: &DMatrix<f64>,
    k: &GramMatrix,
    j: usize,
    xi: f64,
) -> Result<()> {
    cfg.validate()?;
    if j >= x.ncols() {
        return Err(Error::FeatureIndexOutOfRange {
            index: j,
            limit: x.ncols(),
        });
    }
    if k.n() != x.nrows() {
        return Err(Error::Mismatch {
            what: "gram size".to_string(),
            detail: format!("K is {}x{} for {} rows", k.n(), k.n(), x.nrows()),
        });
    }
    if !xi.is_finite() {
        return Err(Error::NonFinite {
            what: "xi".to_string(),
        });
    }
    Ok(())
}

/// Pairwise squared Euclidean distances via the norm/inner-product identity.
fn squared_distances(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let gram = x * x.transpose();
    let mut d2 = DMatrix::zeros(n, n);
    for ip in 0..n {
        let npp = gram[(ip, ip)];
        let mut col = d2.column_mut(ip);
        for i in 0..n {
            col[i] = (gram[(i, i)] + npp - 2.0 * gram[(i, ip)]).max(0.0);
        }
    }
    d2
}

fn select_rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |r, c| x[(idx[r], c)])
}
